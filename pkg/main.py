import argparse  # 命令行参数解析
import logging
import os
import sys

import report_io
import scenario_loader as sl
import scenario_runner as sr
from config import LOG_LEVEL, PARALLEL_CONFIG


def print_summary(bundle):
    """在终端打印场景汇总"""
    summary = bundle.summary
    print("\n" + "=" * 50)
    print(f"场景 {bundle.name} 诊断报告")
    print("=" * 50)

    if 'times' in summary:
        print("\n时间网格:")
        for row in summary['times']:
            extra = f"eta={row['eta']:.6g}" if 'eta' in row else f"max_rebounds={row['max_rebounds']}"
            print(f"  t={row['t']:<8g} mass={row['mass']:.12g}  {extra}")

    for key, title in (('windows', '时间窗口缺陷'), ('resolvent', '预解式缺陷')):
        if summary.get(key):
            print(f"\n{title}:")
            for rep in summary[key]:
                label = f"lambda={rep['lambda']}" if rep['lambda'] is not None else f"window={rep['window']}"
                print(f"  {label}: limit={rep['limit_estimate']:.12g} -> {rep['verdict']}")

    if 'report' in summary:
        rep = summary['report']
        print(f"\n{rep['kind']} 缺陷: limit={rep['limit_estimate']:.12g} ({rep['evidence']}, {rep['orders']} 阶)")

    for j in summary.get('honesty_windows', []):
        print(f"\n子区间 J={j['interval']}: {j['verdict']} (witness {j['witness']}, limit {j['witness_limit']:.12g})")

    print(f"\n结论: {bundle.verdict.value}")
    print("=" * 50 + "\n")


def build_parser():
    parser = argparse.ArgumentParser(description='无碰撞输运边界扰动展开与诚实性诊断')
    sub = parser.add_subparsers(dest='command', required=True)

    def add_common(p):
        p.add_argument('config', help='场景文件路径或内置场景名')
        p.add_argument('--tol', type=float, help='覆盖 run.tol')
        p.add_argument('--n-cap', type=int, help='覆盖 run.n_cap')
        p.add_argument('--seed', type=int, help='覆盖 density.seed')
        p.add_argument('--output-dir', help='覆盖报表输出目录')
        p.add_argument('--jobs', type=int, default=PARALLEL_CONFIG['n_jobs'], help='并行线程数')
        p.add_argument('--quiet', action='store_true', help='不显示进度条与终端汇总')

    add_common(sub.add_parser('run', help='运行完整场景'))
    honesty = sub.add_parser('honesty', help='单个时间窗口上的缺陷')
    add_common(honesty)
    honesty.add_argument('--window', required=True, help='窗口 s,t')
    resolvent = sub.add_parser('resolvent', help='单个 lambda 的预解式缺陷')
    add_common(resolvent)
    resolvent.add_argument('--lambda', dest='lam', type=float, required=True, help='lambda > 0')
    sub.add_parser('list', help='列出内置场景')
    return parser


def main(argv=None):
    """主函数，解析命令行并执行场景"""
    args = build_parser().parse_args(argv)
    quiet = getattr(args, 'quiet', False)
    logging.basicConfig(level=logging.WARNING if quiet else LOG_LEVEL,
                        format='%(asctime)s %(name)s %(levelname)s %(message)s')

    if args.command == 'list':
        for name in sl.list_builtin():
            print(name)
        return 0

    try:
        overrides = {'run.tol': args.tol, 'run.n_cap': args.n_cap, 'density.seed': args.seed,
                     'run.output_dir': args.output_dir}
        scenario = sl.load_scenario(args.config, overrides)
        if args.command == 'run':
            bundle = sr.run_scenario(scenario, n_jobs=args.jobs, quiet=args.quiet)
        elif args.command == 'honesty':
            bundle = sr.run_window(scenario, sr.parse_window(args.window))
        else:
            bundle = sr.run_lambda(scenario, args.lam)
        out_dir = scenario.output_dir if args.command == 'run' else os.path.join(scenario.output_dir, args.command)
        report_io.write_bundle(bundle, out_dir)
    except ValueError as e:
        # 配置错误（TransportError）和命令行参数格式错误都落在这里
        print(f"错误: {e}", file=sys.stderr)
        return 1

    if not args.quiet:
        print_summary(bundle)
    return bundle.exit_code


if __name__ == "__main__":
    sys.exit(main())
