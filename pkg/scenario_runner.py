"""场景执行流程：时间网格上的展开式、缺陷诊断与汇总。

每一步只做一件事，最终产出若干 DataFrame
和一个汇总字典，写盘交给 report_io。
"""
import logging
import math
import sys
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from config import COLUMN_LABELS, MONTE_CARLO_DEFAULTS, PARALLEL_CONFIG, REPORT_CONFIG
from densities import mass, transport_ensemble
from expansion import expansion_state
from honesty import (
    Verdict,
    billiard_trace_decay,
    c_hat_estimate,
    defect,
    honesty_on_subinterval,
    mass_accounting,
    resolvent_defect,
)
from particle_oracle import estimate_mass

logger = logging.getLogger(__name__)


@dataclass
class ReportBundle:
    name: str
    timeseries: pd.DataFrame
    defects: pd.DataFrame
    summary: dict
    verdict: Verdict
    densities: pd.DataFrame = None
    ensemble: pd.DataFrame = None
    reports: list = field(default_factory=list)

    @property
    def exit_code(self):
        return self.verdict.exit_code


def _order_columns(rows, key, label, width):
    """把逐阶数组展开成 mass_order_0, mass_order_1 ... 列"""
    for row in rows:
        values = row.pop(key)
        for k in range(width):
            row[COLUMN_LABELS[label].format(k=k)] = float(values[k]) if k < len(values) else 0.0


def _defect_table(reports):
    columns = ['kind', 's', 't', 'lambda', 'n', 'entry']
    rows = [row for rep in reports for row in rep.to_rows()]
    return pd.DataFrame(rows, columns=columns)


def _report_summary(rep):
    return {
        'kind': rep.kind,
        'window': list(rep.window),
        'lambda': rep.lam,
        'limit_estimate': rep.limit_estimate,
        'orders': len(rep.sequence),
        'converged': rep.converged,
        'evidence': rep.evidence,
        'verdict': rep.verdict.value,
        'tolerance': rep.tolerance,
        'monotone_from': rep.onset,
    }


def _progress(iterable, quiet, desc):
    return tqdm(iterable, desc=desc, disable=quiet or not sys.stderr.isatty(), leave=False)


# ---------------------------------------------------------------------------
# 区间并集（精确路径）
# ---------------------------------------------------------------------------

def _run_interval_union(scenario, n_jobs, quiet):
    run, f, g, spec = scenario.run, scenario.density, scenario.geometry, scenario.spec
    rows, density_rows, time_reports, time_summary = [], [], [], []
    for t in _progress(run.times, quiet, scenario.name):
        state = expansion_state(t, f, g, spec, run.tol, run.n_cap)
        rep = defect(0.0, t, f, g, spec, run.tol, run.n_cap)
        time_reports.append(rep)
        partial = state.partial_sum
        row = {
            't': t,
            'mass': mass(partial),
            'order_mass': state.order_masses,
            'trace_norm': state.trace_norms,
            'eta': rep.eta,
            'residual_bound': state.truncation.residual_bound,
            'orders_used': state.truncation.orders_used,
            'converged': state.truncation.converged,
        }
        if run.oracle_particles:
            seed = scenario.config.density.seed
            if seed is None:
                seed = MONTE_CARLO_DEFAULTS['seed']
            estimate = estimate_mass(f, t, g, spec, n=run.oracle_particles, seed=seed)
            row['oracle_mass'] = estimate.mass
            row['oracle_std_error'] = estimate.std_error
        rows.append(row)
        density_rows.extend({'t': t, 'interval': k, 'left': a, 'right': b, 'value': v}
                            for k, a, b, v in partial.pieces())
        time_summary.append({
            't': t,
            'mass': row['mass'],
            'eta': rep.eta,
            'orders_used': row['orders_used'],
            'residual_bound': row['residual_bound'],
            'trace_norm': state.truncation.trace_norm,
            'converged': row['converged'],
            'defect_verdict': rep.verdict.value,
        })

    width = max(len(r['order_mass']) for r in rows)
    _order_columns(rows, 'order_mass', 'order_mass', width)
    _order_columns(rows, 'trace_norm', 'trace_norm', width)

    parallel = Parallel(n_jobs=n_jobs, prefer='threads')
    window_reports = parallel(delayed(defect)(s, t, f, g, spec, run.tol, run.n_cap) for s, t in run.windows)
    resolvent_reports = parallel(delayed(resolvent_defect)(f, lam, g, spec, run.tol, run.n_cap) for lam in run.lambdas)
    subintervals = [honesty_on_subinterval(J, f, g, spec, run.window_samples, run.tol, run.n_cap, n_jobs)
                    for J in run.honesty_windows]

    accounting = mass_accounting(run.times[-1], f, g, spec, run.tol, run.n_cap)
    c_hat = c_hat_estimate(f, g, spec, n_cap=run.n_cap)

    time_verdicts = [rep.verdict for rep in time_reports + window_reports]
    resolvent_verdicts = [rep.verdict for rep in resolvent_reports]
    # 只比较两侧是否存在不诚实的结论
    time_dishonest = Verdict.DISHONEST in time_verdicts
    resolvent_dishonest = Verdict.DISHONEST in resolvent_verdicts
    per_lambda = {v for v in resolvent_verdicts if v != Verdict.INCONCLUSIVE}
    consistent = not resolvent_verdicts or (time_dishonest == resolvent_dishonest and len(per_lambda) <= 1)
    unconverged = [r['t'] for r in time_summary if not r['converged']]
    verdicts = time_verdicts + resolvent_verdicts + [j.verdict for j in subintervals]
    if unconverged:
        verdicts.append(Verdict.INCONCLUSIVE)

    summary = {
        'times': time_summary,
        'windows': [_report_summary(rep) for rep in window_reports],
        'resolvent': [_report_summary(rep) for rep in resolvent_reports],
        'honesty_windows': [{
            'interval': list(j.interval),
            'verdict': j.verdict.value,
            'witness': list(j.witness),
            'witness_limit': j.witness_limit,
        } for j in subintervals],
        'mass_accounting': {
            't': run.times[-1],
            'loss': accounting.loss,
            'boundary_loss': accounting.boundary_loss,
            'defect': accounting.defect,
            'converged': accounting.converged,
        },
        'c_hat': {'value': c_hat.value, 'step': c_hat.step, 'label': c_hat.label},
        'time_resolvent_consistent': consistent,
        'unconverged_times': unconverged,
    }
    if not consistent:
        logger.warning("time-domain and resolvent verdicts disagree (time dishonest: %s, resolvent dishonest: %s)",
                       time_dishonest, resolvent_dishonest)
    all_reports = time_reports + window_reports + resolvent_reports
    return rows, pd.DataFrame(density_rows, columns=['t', 'interval', 'left', 'right', 'value']), None, \
        summary, verdicts, all_reports


# ---------------------------------------------------------------------------
# 台球（粒子系综路径）
# ---------------------------------------------------------------------------

def _run_billiard(scenario, n_jobs, quiet):
    run, e0, g = scenario.run, scenario.density, scenario.geometry
    width = REPORT_CONFIG['order_columns']
    speed0 = np.hypot(e0.velocities[:, 0], e0.velocities[:, 1])
    rows, time_reports, time_summary = [], [], []
    speed_drift = 0.0
    moved = e0
    for t in _progress(run.times, quiet, scenario.name):
        moved = transport_ensemble(e0, t, g)
        rep = billiard_trace_decay(e0, t, g, moved=moved)
        time_reports.append(rep)
        speed = np.hypot(moved.velocities[:, 0], moved.velocities[:, 1])
        speed_drift = max(speed_drift, float(np.max(np.abs(speed - speed0))))
        rows.append({
            't': t,
            'mass': mass(moved),
            'order_mass': moved.rebound_histogram(),
            'trace_norm': moved.trace_norms(),
            'eta': rep.eta,
            'statistical_tolerance': rep.tolerance,
            'orders_used': int(moved.rebounds.max()) if moved.size else 0,
            'converged': True,
            'degenerate': moved.degenerate_count,
        })
        time_summary.append({
            't': t,
            'mass': mass(moved),
            'max_rebounds': rows[-1]['orders_used'],
            'degenerate_count': moved.degenerate_count,
            'tail_limit': rep.limit_estimate,
            'statistical_tolerance': rep.tolerance,
            'monotone_from': rep.onset,
            'decay_verdict': rep.verdict.value,
        })
    _order_columns(rows, 'order_mass', 'order_mass', width)
    _order_columns(rows, 'trace_norm', 'trace_norm', width)

    window_reports = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(billiard_trace_decay)(e0, t, g, s) for s, t in run.windows
    )
    ensemble = None
    if run.dump_ensemble:
        ensemble = pd.DataFrame({
            'x': moved.positions[:, 0], 'y': moved.positions[:, 1],
            'vx': moved.velocities[:, 0], 'vy': moved.velocities[:, 1],
            'weight': moved.weights, 'rebounds': moved.rebounds, 'degenerate': moved.degenerate,
        })
    summary = {
        'times': time_summary,
        'windows': [_report_summary(rep) for rep in window_reports],
        'n_particles': e0.size,
        'seed': e0.seed,
        'max_speed_drift': speed_drift,
    }
    verdicts = [rep.verdict for rep in time_reports + window_reports]
    return rows, None, ensemble, summary, verdicts, time_reports + window_reports


def run_scenario(scenario, n_jobs=PARALLEL_CONFIG['n_jobs'], quiet=False):
    """执行一个场景，返回报表集合（不写盘）"""
    logger.info("running scenario %s", scenario.name)
    runner = _run_billiard if scenario.is_billiard else _run_interval_union
    rows, densities, ensemble, summary, verdicts, reports = runner(scenario, n_jobs, quiet)

    timeseries = pd.DataFrame(rows).rename(columns={k: v for k, v in COLUMN_LABELS.items() if '{' not in v})
    # 固定列顺序: t, mass, 逐阶质量, 逐阶迹范数, 其余
    orders = [c for c in timeseries if c.startswith('mass_order_')] + \
             [c for c in timeseries if c.startswith('trace_order_')]
    head = ['t', 'mass'] + orders
    timeseries = timeseries[head + [c for c in timeseries if c not in head]]
    verdict = Verdict.overall(verdicts)
    run = scenario.run
    summary.update({
        'scenario': scenario.name,
        'geometry': scenario.config.geometry.kind,
        'boundary': {'kind': scenario.spec.kind, 'r': scenario.spec.r},
        'tol': run.tol,
        'n_cap': run.n_cap,
        'verdict': verdict.value,
    })
    logger.info("scenario %s: %s", scenario.name, verdict.value)
    return ReportBundle(scenario.name, timeseries, _defect_table(reports), summary, verdict,
                        densities=densities, ensemble=ensemble, reports=reports)


def run_window(scenario, window):
    """honesty 子命令：单个窗口上的缺陷诊断"""
    s, t = window
    run = scenario.run
    if scenario.is_billiard:
        rep = billiard_trace_decay(scenario.density, t, scenario.geometry, s)
    else:
        rep = defect(s, t, scenario.density, scenario.geometry, scenario.spec, run.tol, run.n_cap)
    return _single_report_bundle(scenario, rep)


def run_lambda(scenario, lam):
    """resolvent 子命令：单个 lambda 的预解式缺陷"""
    run = scenario.run
    rep = resolvent_defect(scenario.density, lam, scenario.geometry, scenario.spec, run.tol, run.n_cap)
    return _single_report_bundle(scenario, rep)


def _single_report_bundle(scenario, rep):
    summary = {
        'scenario': scenario.name,
        'geometry': scenario.config.geometry.kind,
        'report': _report_summary(rep),
        'verdict': rep.verdict.value,
    }
    timeseries = pd.DataFrame([{'n': n, 'entry': e} for n, e in enumerate(rep.sequence)], columns=['n', 'entry'])
    return ReportBundle(scenario.name, timeseries, _defect_table([rep]), summary, rep.verdict, reports=[rep])


def parse_window(text):
    """'s,t' -> (s, t)"""
    try:
        s, t = (float(x) for x in text.split(','))
    except ValueError as exc:
        raise ValueError(f"window must look like 's,t', got {text!r}") from exc
    if not 0 <= s <= t or not math.isfinite(t):
        raise ValueError(f"window ({s}, {t}) must satisfy 0 <= s <= t")
    return s, t
