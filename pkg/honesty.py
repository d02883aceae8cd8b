"""诚实性诊断: 质量损失、边界泛函与缺陷。

当 t -> V_H(t)f 损失的每一份质量都能由边界解释（时间积分迹上的 a_0 泛函）时，
轨道是诚实的。剩下的部分就是缺陷

    lim_n ||B+ int_s^t U_n(r)f dr||,

诚实轨道的缺陷为零。同一极限也可以在预解式一侧读出:
lim_n ||(M_lambda H)^n G_lambda f||。
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from boundary_operators import BoundaryVector, G_lambda, M_lambda, Side, apply_H
from config import EXPANSION_DEFAULTS, HONESTY_DEFAULTS, PARALLEL_CONFIG
from densities import PiecewiseDensity, mass, transport_ensemble
from errors import QuasiInteriorError, SignedDensityError, UnsupportedGeometryError
from expansion import Expansion, v_partial_sum

logger = logging.getLogger(__name__)

TOL = EXPANSION_DEFAULTS['tol']
N_CAP = EXPANSION_DEFAULTS['n_cap']
SPAN = HONESTY_DEFAULTS['stabilization_span']


class Verdict(str, Enum):
    HONEST = 'honest'
    DISHONEST = 'dishonest'
    INCONCLUSIVE = 'inconclusive'

    @property
    def exit_code(self):
        return {'honest': 0, 'dishonest': 2, 'inconclusive': 3}[self.value]

    @classmethod
    def overall(cls, verdicts):
        verdicts = list(verdicts)
        if cls.DISHONEST in verdicts:
            return cls.DISHONEST
        if cls.INCONCLUSIVE in verdicts:
            return cls.INCONCLUSIVE
        return cls.HONEST


@dataclass(frozen=True)
class DefectReport:
    kind: str
    window: tuple
    sequence: tuple
    limit_estimate: float
    converged: bool
    evidence: str
    verdict: Verdict
    lam: float = None
    tolerance: float = TOL
    onset: int = None

    @property
    def eta(self):
        """窗口终点处的 eta_f（时间域窗口从 0 开始）"""
        return -self.limit_estimate if self.limit_estimate else 0.0

    def to_rows(self):
        s, t = self.window
        return [
            {'kind': self.kind, 's': s, 't': t, 'lambda': self.lam, 'n': n, 'entry': entry}
            for n, entry in enumerate(self.sequence)
        ]


def _require_nonnegative(f):
    if isinstance(f, PiecewiseDensity) and not f.is_nonnegative():
        raise SignedDensityError("honesty diagnostics need a nonnegative density")


def _stabilized(values, tol, span):
    if len(values) < span:
        return False
    tail = values[-span:]
    if any(math.isinf(v) for v in tail):
        return False
    return max(tail) - min(tail) < tol / 10


def _judge(entries, fronts, tol, span, monotone):
    """返回 (limit, converged, evidence, verdict)；返回 None 表示继续迭代"""
    last = entries[-1]
    if monotone and last <= tol:
        return last, True, 'below-tolerance', Verdict.HONEST
    if _stabilized(entries, tol, span) and (fronts is None or _stabilized(fronts, tol, span)):
        verdict = Verdict.HONEST if last <= tol else Verdict.DISHONEST
        return last, True, 'stabilized', verdict
    return None


# ---------------------------------------------------------------------------
# 边界泛函
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MassLoss:
    loss: float
    converged: bool

    @property
    def verdict(self):
        return None if self.converged else Verdict.INCONCLUSIVE


def mass_loss(s, t, f, g, spec, tol=TOL, n_cap=N_CAP):
    """||V_H(s)f|| - ||V_H(t)f||"""
    if not 0 <= s <= t:
        raise ValueError("mass loss needs 0 <= s <= t")
    _require_nonnegative(f)
    if s == t:
        return MassLoss(0.0, True)
    early, early_report = v_partial_sum(s, f, g, spec, tol, n_cap)
    late, late_report = v_partial_sum(t, f, g, spec, tol, n_cap)
    return MassLoss(mass(early) - mass(late), early_report.converged and late_report.converged)


def a0_functional(trace, spec, g=None):
    """到达 Gamma_+ 的量与 H 送回的量之差（有符号）"""
    if trace.side != Side.OUTGOING:
        raise ValueError("a0 acts on outgoing traces")
    return trace.total - apply_H(spec, trace, g).total


# ---------------------------------------------------------------------------
# 缺陷
# ---------------------------------------------------------------------------

def defect(s, t, f, g, spec, tol=TOL, n_cap=N_CAP, span=SPAN):
    """
    n 增大时 ||B+ int_s^t U_n f|| 的极限

    s = 0 时各项单调不增，只要有一项低于 tol 就能判定诚实；否则要求各项与
    通量前沿（第 n 阶最早的出射时间）连续 ``span`` 阶不再变化。
        s, t: 时间窗口，0 <= s <= t
        f: 非负 PiecewiseDensity
        g, spec: 几何与边界算子
    Returns:
        DefectReport
    """
    if not 0 <= s <= t:
        raise ValueError("defect window needs 0 <= s <= t")
    _require_nonnegative(f)
    engine = Expansion(f, g, spec, horizon=t, n_cap=n_cap)
    entries, fronts = [], []
    result = None
    for n in range(n_cap + 1):
        entries.append(engine.trace_integral(n, s, t).norm)
        fronts.append(engine.front(n))
        if engine.exhausted_after(n):
            result = (0.0, True, 'exhausted', Verdict.HONEST)
            break
        result = _judge(entries, fronts, tol, span, monotone=(s == 0))
        if result is not None:
            break
    if result is None:
        result = (entries[-1], False, 'n_cap', Verdict.INCONCLUSIVE)
        logger.warning("defect on [%s, %s] did not stabilize within %d orders", s, t, n_cap)
    limit, converged, evidence, verdict = result
    return DefectReport('time', (float(s), float(t)), tuple(entries), limit, converged, evidence, verdict,
                        tolerance=tol)


def resolvent_defect(f, lam, g, spec, tol=TOL, n_cap=N_CAP, span=SPAN):
    """||(M_lambda H)^n G_lambda f|| 的极限，各项单调不增"""
    _require_nonnegative(f)
    if spec.kind == 'specular':
        raise UnsupportedGeometryError("resolvent defect needs a discrete boundary")
    u = G_lambda(f, lam, g)
    entries = []
    result = None
    for _ in range(n_cap + 1):
        entries.append(u.norm)
        if not u.entries:
            result = (0.0, True, 'exhausted', Verdict.HONEST)
            break
        result = _judge(entries, None, tol, span, monotone=True)
        if result is not None:
            break
        u = M_lambda(apply_H(spec, u, g), lam, g)
    if result is None:
        result = (entries[-1], False, 'n_cap', Verdict.INCONCLUSIVE)
        logger.warning("resolvent defect at lambda=%s did not stabilize within %d orders", lam, n_cap)
    limit, converged, evidence, verdict = result
    return DefectReport('resolvent', (0.0, math.inf), tuple(entries), limit, converged, evidence, verdict,
                        lam=float(lam), tolerance=tol)


@dataclass(frozen=True)
class SubintervalVerdict:
    interval: tuple
    verdict: Verdict
    witness: tuple
    witness_limit: float
    reports: list = field(default_factory=list)


def honesty_on_subinterval(interval, f, g, spec, samples=HONESTY_DEFAULTS['window_samples'], tol=TOL,
                           n_cap=N_CAP, n_jobs=PARALLEL_CONFIG['n_jobs']):
    """
    在 J = [s1, s2] 内的每个网格窗口 (s, t) 上计算缺陷

    只要有一个窗口不诚实，J 就不诚实；否则任一不确定窗口使 J 不确定。
    """
    s1, s2 = interval
    if s2 < s1 or s1 < 0:
        raise ValueError(f"interval {interval} must satisfy 0 <= s1 <= s2")
    if samples < 2:
        raise ValueError("need at least two grid points")
    if s1 == s2:
        return SubintervalVerdict((s1, s2), Verdict.HONEST, (s1, s2), 0.0)
    grid = np.linspace(s1, s2, samples)
    windows = [(float(grid[i]), float(grid[j])) for i in range(samples) for j in range(i + 1, samples)]
    reports = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(defect)(s, t, f, g, spec, tol, n_cap) for s, t in windows
    )
    worst = max(reports, key=lambda rep: rep.limit_estimate)
    verdict = Verdict.overall(rep.verdict for rep in reports)
    logger.info("honesty on [%s, %s]: %s (worst window %s, limit %.6g)", s1, s2, verdict.value,
                worst.window, worst.limit_estimate)
    return SubintervalVerdict((s1, s2), verdict, worst.window, worst.limit_estimate, reports)


def eta_profile(times, f, g, spec, tol=TOL, n_cap=N_CAP, n_jobs=PARALLEL_CONFIG['n_jobs']):
    """时间网格上的 eta_f(t) = -lim_n ||B+ int_0^t U_n f||"""
    reports = Parallel(n_jobs=n_jobs, prefer='threads')(
        delayed(defect)(0.0, t, f, g, spec, tol, n_cap) for t in times
    )
    return pd.Series([rep.eta for rep in reports], index=pd.Index(times, name='t'), name='eta')


@dataclass(frozen=True)
class MassAccounting:
    loss: float
    boundary_loss: float
    defect: float
    converged: bool

    @property
    def unexplained(self):
        return self.loss - self.boundary_loss - self.defect


def mass_accounting(t, f, g, spec, tol=TOL, n_cap=N_CAP):
    """把 ||f|| - ||V_H(t)f|| 拆成边界可解释的部分和缺陷"""
    _require_nonnegative(f)
    late, truncation = v_partial_sum(t, f, g, spec, tol, n_cap)
    report = defect(0.0, t, f, g, spec, tol, n_cap)
    engine = Expansion(f, g, spec, horizon=t, n_cap=n_cap)
    orders = len(report.sequence) - 1
    boundary_loss = math.fsum(a0_functional(engine.trace_integral(k, 0.0, t), spec, g) for k in range(orders))
    # 已耗尽: 最后一阶剩下的量已被 H 永久丢弃
    if report.evidence == 'exhausted':
        boundary_loss += a0_functional(engine.trace_integral(orders, 0.0, t), spec, g)
    return MassAccounting(
        loss=mass(f) - mass(late),
        boundary_loss=boundary_loss,
        defect=report.limit_estimate,
        converged=truncation.converged and report.converged,
    )


@dataclass(frozen=True)
class CHatEstimate:
    value: float
    step: float
    orders: int
    label: str = 'finite-difference estimate'


def c_hat_estimate(f, g, spec, h=HONESTY_DEFAULTS['c_hat_step'], n_cap=N_CAP):
    """(1/h) sum_k a0(B+ int_0^h U_k f)，t = 0 附近边界损失率的估计"""
    if not h > 0:
        raise ValueError("step must be positive")
    engine = Expansion(f, g, spec, horizon=h, n_cap=n_cap)
    terms = []
    n = 0
    while n <= n_cap:
        terms.append(a0_functional(engine.trace_integral(n, 0.0, h), spec, g))
        if engine.exhausted_after(n):
            break
        n += 1
    return CHatEstimate(math.fsum(terms) / h, h, n)


# ---------------------------------------------------------------------------
# 充分条件
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SufficientCheck:
    satisfied: bool
    witness: int = None
    lhs: float = 0.0
    rhs: float = 0.0

    @property
    def status(self):
        return 'satisfied' if self.satisfied else 'violated'


def sufficient_honesty_check(subject, g, spec, lam=None, indices=None):
    """
    诚实性的逐点充分条件
        subject: {b_k} 上严格正的权重 h，检验 (H h)(a_k) <= h(b_k)；
                 或非负密度 f，逐项检验 (M_lambda H) G_lambda f <= G_lambda f
        lam: 密度形式下必须给出
    Returns:
        SufficientCheck: 不满足时给出违反最严重的下标
    """
    if isinstance(subject, BoundaryVector):
        return _weight_check(subject, g, spec, indices)
    if lam is None:
        raise ValueError("the resolvent variant needs lambda")
    _require_nonnegative(subject)
    base = G_lambda(subject, lam, g)
    pushed = M_lambda(apply_H(spec, base, g), lam, g)
    return _first_violation(pushed, base, sorted(set(base.support) | set(pushed.support)))


def _weight_check(h, g, spec, indices):
    if h.side != Side.OUTGOING:
        raise ValueError("weight must live on the outgoing boundary")
    if indices is None:
        count = g.count if g.count is not None else (max(h.support) + 1 if h.support else 0)
        indices = range(count)
    indices = list(indices)
    missing = [k for k in indices if not h.get(k) > 0]
    if not indices or missing:
        raise QuasiInteriorError(f"weight must be strictly positive on every checked index (fails at {missing[:5]})")
    pulled = apply_H(spec, h, g)
    # b_k 的起点是 a_k，比较 (H h)(a_k) 与 h(b_k)
    pulled = BoundaryVector(dict(pulled.entries), Side.OUTGOING)
    return _first_violation(pulled, h, indices)


def _first_violation(lhs, rhs, indices):
    worst = None
    for k in indices:
        excess = lhs.get(k) - rhs.get(k)
        if excess > 0 and (worst is None or excess > worst[1]):
            worst = (k, excess)
    if worst is None:
        return SufficientCheck(True)
    k = worst[0]
    return SufficientCheck(False, witness=k, lhs=lhs.get(k), rhs=rhs.get(k))


# ---------------------------------------------------------------------------
# 台球
# ---------------------------------------------------------------------------

def billiard_trace_decay(e0, t, g, s=0.0, sigmas=HONESTY_DEFAULTS['statistical_sigmas'], moved=None):
    """
    对每个 n，第 n+1 次反弹落在 (s, t] 内的粒子权重

    粒子有限，序列最终精确为零。在 ceil(t * max_speed / diameter) 之后各项上升
    不得超过 sigmas*mass/sqrt(N)，退化反弹处冻结的权重也不得超过同一容差；
    否则判为不确定。
        e0: 初始 ParticleEnsemble
        t: 窗口终点
        s: 窗口起点
        moved: 已输运到 t 的系综，可省去重复计算
    Returns:
        DefectReport: onset 为单调性开始检验的阶
    """
    if not 0 <= s <= t:
        raise ValueError("window needs 0 <= s <= t")
    moved = moved if moved is not None else transport_ensemble(e0, t, g)
    later = moved.trace_norms()
    earlier = transport_ensemble(e0, s, g).trace_norms() if s > 0 else np.zeros(1)
    size = max(len(later), len(earlier))
    entries = np.pad(later, (0, size - len(later))) - np.pad(earlier, (0, size - len(earlier)))
    entries = np.maximum(entries, 0.0)
    tol = sigmas * mass(e0) / math.sqrt(max(e0.size, 1))
    onset = math.ceil(t * g.velocity.fastest / g.domain.diameter)
    tail = entries[onset:]
    rise = float(np.max(np.diff(tail))) if tail.size > 1 else 0.0
    frozen = float(moved.weights[moved.degenerate].sum())
    if frozen > tol:
        evidence, verdict = 'degenerate', Verdict.INCONCLUSIVE
    elif rise > tol:
        evidence, verdict = 'rising-tail', Verdict.INCONCLUSIVE
    else:
        evidence, verdict = 'exhausted', Verdict.HONEST
    if verdict != Verdict.HONEST:
        logger.warning("billiard decay on [%s, %s] inconclusive: %s (frozen %.3g, rise %.3g, tol %.3g)",
                       s, t, evidence, frozen, rise, tol)
    return DefectReport('billiard', (float(s), float(t)), tuple(float(x) for x in entries), float(entries[-1]),
                        True, evidence, verdict, tolerance=tol, onset=onset)
