"""迭代族 U_k(t)、V_H(t) 的部分和以及时间积分迹。

在区间并集上，每一阶都由其边界通量承载，通量是时间的阶梯函数:

    phi_k^m(s) = B+ U_k(s) f (b_m)       第 k 阶在 b_m 的出射通量
    psi_k^m(s) = (H phi_{k-1})(a_m)(s)   第 k 阶在 a_m 的入射通量

第 0 阶以 phi_0^m(s) = f(b_m - s) 离开 b_m；入射通量恰好用 Delta_m 穿过 I_m，
所以 phi_k^m(s) = psi_k^m(s - Delta_m)，t 时刻第 k 阶密度为
U_k(t)f(a_m + u) = psi_k^m(t - u)。阶梯函数的平移、反射与窗口积分都是精确的，
下面的一切计算因此也是精确的。
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from boundary_operators import BoundaryVector, Side, apply_H, apply_H_to_fluxes, resolvent_eval
from config import EXPANSION_DEFAULTS
from densities import PiecewiseDensity, free_stream, mass
from errors import MassBalanceError, SignedDensityError, UnsupportedGeometryError
from geometry import IntervalUnion

logger = logging.getLogger(__name__)

BALANCE_ATOL = 1e-12


@dataclass(frozen=True)
class OrderFluxes:
    incoming: dict
    outgoing: dict

    @property
    def is_empty(self):
        return not self.incoming and not self.outgoing


class Expansion:
    """
    按阶惰性记录 U_k(t)f，0 <= t <= horizon
        f: PiecewiseDensity
        g: IntervalUnion
        spec: 离散边界算子
        horizon: 时间上限
        n_cap: 阶数上限（只限制 arrivals，不算作耗尽）
    """

    def __init__(self, f, g, spec, horizon, n_cap=EXPANSION_DEFAULTS['n_cap']):
        if not isinstance(g, IntervalUnion) or spec.kind == 'specular':
            raise UnsupportedGeometryError("exact expansion needs an interval union; billiards use ensembles")
        if horizon < 0:
            raise ValueError("horizon must be nonnegative")
        self.f = f
        self.geometry = g
        self.spec = spec
        self.horizon = float(horizon)
        self.n_cap = int(n_cap)
        self.max_order = self._order_bound()
        outgoing = {}
        for k, part in f.parts.items():
            flux = part.reflect(g.delta(k)).clip(0.0, self.horizon)
            if not flux.is_zero:
                outgoing[k] = flux
        self._orders = [OrderFluxes({}, outgoing)]
        self._arrivals = {}

    def _order_bound(self):
        # 平移算子: 从 I_k 出发的通量最多用到 reach(k, horizon) 阶
        # 这里不能用 n_cap，exhausted_after() 读取的是这个界
        if self.f.is_zero:
            return 0
        if self.spec.kind != 'shift':
            return math.inf
        reaches = [self.geometry.reach(k, self.horizon) for k in self.f.intervals]
        if any(n is None for n in reaches):
            return math.inf
        return max(reaches)

    def fluxes(self, n):
        if n > self.max_order:
            return OrderFluxes({}, {})
        while len(self._orders) <= n:
            self._orders.append(self._next(self._orders[-1]))
        return self._orders[n]

    def _next(self, prev):
        if not prev.outgoing:
            return OrderFluxes({}, {})
        incoming = apply_H_to_fluxes(self.spec, prev.outgoing, self.geometry)
        outgoing = {}
        for m, flux in incoming.items():
            out = flux.shift(self.geometry.delta(m)).clip(0.0, self.horizon)
            if not out.is_zero:
                outgoing[m] = out
        return OrderFluxes(incoming, outgoing)

    def exhausted_after(self, n):
        """n 以上各阶在 [0, horizon] 上全部为零时返回 True"""
        return self.fluxes(n + 1).is_empty

    def _check_time(self, t):
        if t < 0 or t > self.horizon * (1 + 1e-15) + 1e-15:
            raise ValueError(f"t={t} outside the computed horizon [0, {self.horizon}]")

    def density(self, n, t):
        """U_n(t)f，精确的分段密度"""
        self._check_time(t)
        if n == 0:
            return free_stream(self.f, t, self.geometry)
        if t == 0:
            return PiecewiseDensity.zero(self.geometry)
        parts = {
            m: flux.reflect(t).clip(0.0, self.geometry.delta(m))
            for m, flux in self.fluxes(n).incoming.items()
        }
        return PiecewiseDensity(self.geometry, parts)

    def trace_integral(self, n, s, t):
        """出射边界上的 B+ int_s^t U_n(r)f dr"""
        self._check_time(t)
        entries = {m: flux.integral(s, t) for m, flux in self.fluxes(n).outgoing.items()}
        return BoundaryVector(entries, Side.OUTGOING)

    def front(self, n):
        """第 n 阶最早穿出边界的时间"""
        starts = [flux.support[0] for flux in self.fluxes(n).outgoing.values()]
        return min(starts) if starts else math.inf

    def residual_bound(self, n, t):
        """
        sum_{k>n} ||U_k(t)f|| 的上界

        s 时刻离开 b_m 的质量只有在 t - s < R_m（逃逸前剩余的时间）时才可能仍在
        Omega 内；除非平移穿过可求和的尾部，R_m 为无穷，此时上界就是迹范数。
        有符号通量按 |flux| 积分，正负两部分不会相互抵消。
            n: 已保留的最高阶
            t: 时间
        Returns:
            float: 上界
        """
        self._check_time(t)
        total = []
        for m, flux in self.fluxes(n).outgoing.items():
            weight = math.fsum(w for _, w in self.spec.targets(m, self.geometry))
            if weight == 0:
                continue
            lo = max(0.0, t - self.spec.max_transit_after(m, self.geometry))
            total.append(weight * flux.abs_integral(lo, t))
        return math.fsum(total)

    def arrivals(self, k):
        """到达 a_k 的各阶（n >= 1）入射通量 psi_n^k"""
        if k not in self._arrivals:
            found = []
            n = 1
            while n <= self.n_cap and not self.fluxes(n).is_empty:
                flux = self.fluxes(n).incoming.get(k)
                if flux is not None:
                    found.append(flux)
                n += 1
            self._arrivals[k] = found
        return self._arrivals[k]

    def evaluate_at(self, k, u, t):
        """对所有已计算的阶求和得到 V_H(t)f(a_k + u)"""
        value = float(self.f.part(k)(u - t)) if u > t else 0.0
        if t > u:
            value += math.fsum(float(flux(t - u)) for flux in self.arrivals(k))
        return value

    def time_breakpoints(self, k, u):
        """t -> V_H(t)f(a_k + u) 可能跳变的时刻"""
        points = [u - e for e in self.f.part(k).edges]
        for flux in self.arrivals(k):
            points.extend(u + e for e in flux.edges)
        return points


# ---------------------------------------------------------------------------
# 操作
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncationReport:
    orders_used: int
    residual_bound: float
    trace_norm: float
    converged: bool

    @property
    def status(self):
        return 'converged' if self.converged else 'unconverged'


@dataclass(frozen=True, eq=False)
class ExpansionState:
    geometry: IntervalUnion
    spec: object
    f: PiecewiseDensity
    t: float
    orders: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    truncation: TruncationReport = None

    @property
    def partial_sum(self):
        total = PiecewiseDensity.zero(self.geometry)
        for density in self.orders:
            total = total + density
        return total

    @property
    def order_masses(self):
        return [mass(density) for density in self.orders]

    @property
    def trace_norms(self):
        return [trace.norm for trace in self.traces]


def u_k_apply(k, t, f, g, spec):
    """U_k(t)f"""
    if k < 0 or t < 0:
        raise ValueError("u_k_apply needs k >= 0 and t >= 0")
    return Expansion(f, g, spec, horizon=t, n_cap=max(k, 1)).density(k, t)


def expansion_state(t, f, g, spec, tol=EXPANSION_DEFAULTS['tol'], n_cap=EXPANSION_DEFAULTS['n_cap']):
    """
    逐阶计算 U_0(t)f .. U_n(t)f，n 为余项界首次低于 tol 的阶
        t: 时间
        f: PiecewiseDensity
        g, spec: 几何与边界算子
        tol: 余项界阈值
        n_cap: 阶数上限，达到时报告 unconverged
    Returns:
        ExpansionState: 各阶密度、时间积分迹与截断报告
    """
    if t < 0 or not tol > 0:
        raise ValueError("expansion needs t >= 0 and tol > 0")
    engine = Expansion(f, g, spec, horizon=t, n_cap=n_cap)
    orders, traces = [], []
    report = None
    for n in range(n_cap + 1):
        orders.append(engine.density(n, t))
        traces.append(engine.trace_integral(n, 0.0, t))
        bound = 0.0 if engine.exhausted_after(n) else engine.residual_bound(n, t)
        if bound < tol:
            report = TruncationReport(n, bound, traces[-1].norm, converged=True)
            break
    if report is None:
        report = TruncationReport(n_cap, bound, traces[-1].norm, converged=False)
        logger.warning("partial sum at t=%s unconverged after %d orders (bound %.3e)", t, n_cap, bound)
    return ExpansionState(g, spec, f, t, orders, traces, report)


def v_partial_sum(t, f, g, spec, tol=EXPANSION_DEFAULTS['tol'], n_cap=EXPANSION_DEFAULTS['n_cap']):
    """(sum_{k<=n} U_k(t)f, 截断报告)"""
    state = expansion_state(t, f, g, spec, tol, n_cap)
    return state.partial_sum, state.truncation


def v_r_partial_sum(t, f, r, g, spec, tol=EXPANSION_DEFAULTS['tol'], n_cap=EXPANSION_DEFAULTS['n_cap']):
    """V_r(t)f 的部分和，V_r 为 H_r = r H 生成的半群"""
    if not (0 < r <= 1):
        raise ValueError(f"r={r} must lie in (0, 1]")
    return v_partial_sum(t, f, g, spec.scaled(r), tol, n_cap)


def boundary_time_integral(k, t, f, g, spec):
    """B+ int_0^t U_k(s)f ds"""
    if k < 0 or t < 0:
        raise ValueError("boundary_time_integral needs k >= 0 and t >= 0")
    return Expansion(f, g, spec, horizon=t, n_cap=max(k, 1)).trace_integral(k, 0.0, t)


@dataclass(frozen=True)
class MassBalance:
    lhs: float
    rhs: float
    brackets: list

    @property
    def discrepancy(self):
        return abs(self.lhs - self.rhs)


def mass_balance_report(n, t, f, g, spec, atol=BALANCE_ATOL, strict=True):
    """
    质量收支: sum_{k<=n} ||U_k(t)f|| 对照 ||f|| - ||B+ int U_n|| + sum_{k<n}[||H B+ int U_k|| - ||B+ int U_k||]
        n: 最高阶
        t: 时间
        f: 非负 PiecewiseDensity
        atol: 容差，精确路径必须在此范围内闭合
        strict: 为 True 时超出容差抛出 MassBalanceError，否则只记录警告
    Returns:
        MassBalance
    """
    if not f.is_nonnegative():
        raise SignedDensityError("mass balance needs a nonnegative density")
    engine = Expansion(f, g, spec, horizon=t, n_cap=max(n, 1))
    lhs = math.fsum(mass(engine.density(k, t)) for k in range(n + 1))
    traces = [engine.trace_integral(k, 0.0, t) for k in range(n + 1)]
    brackets = [apply_H(spec, traces[k], g).norm - traces[k].norm for k in range(n)]
    rhs = mass(f) - traces[n].norm + math.fsum(brackets)
    balance = MassBalance(lhs, rhs, brackets)
    if balance.discrepancy > atol:
        if strict:
            raise MassBalanceError(lhs, rhs, atol)
        logger.warning("mass balance off by %.3e at n=%d, t=%s", balance.discrepancy, n, t)
    return balance


def semigroup_identity_residual(k, t, s, f, g, spec):
    """||U_k(t+s)f - sum_{j<=k} U_j(t) U_{k-j}(s) f||"""
    if min(k, t, s) < 0:
        raise ValueError("semigroup identity needs k, t, s >= 0")
    lhs = u_k_apply(k, t + s, f, g, spec)
    inner = Expansion(f, g, spec, horizon=s, n_cap=max(k, 1))
    rhs = PiecewiseDensity.zero(g)
    for j in range(k + 1):
        middle = inner.density(k - j, s)
        rhs = rhs + Expansion(middle, g, spec, horizon=t, n_cap=max(j, 1)).density(j, t)
    return mass(lhs - rhs)


def evaluate_partial_sum(x, t, f, g, spec, n_cap=EXPANSION_DEFAULTS['n_cap']):
    """n_cap 以内可达各阶之和 V_H(t)f(x) 的逐点值"""
    k, u = g.locate(x)
    return Expansion(f, g, spec, horizon=t, n_cap=n_cap).evaluate_at(k, u, t)


@dataclass(frozen=True)
class LaplaceCheck:
    quadrature: float
    resolvent: float
    quadrature_bound: float
    resolvent_bound: float

    @property
    def gap(self):
        return abs(self.quadrature - self.resolvent)

    def agrees(self, atol=1e-6):
        return self.gap <= self.quadrature_bound + self.resolvent_bound + atol


def laplace_consistency(f, lam, x, g, spec, n_max=100, n_cap=EXPANSION_DEFAULTS['n_cap'], tail=1e-10):
    """用自适应求积计算 int_0^T exp(-lam t) V_H(t)f(x) dt，并与 resolvent_eval 比较"""
    sup_f = max((float(np.max(np.abs(p.values))) for p in f.parts.values()), default=0.0)
    scale = max(sup_f, 1.0)
    horizon = math.log(scale / (lam * tail)) / lam
    engine = Expansion(f, g, spec, horizon=horizon, n_cap=n_cap)
    k, u = g.locate(x)
    points = sorted({0.0, horizon, *(p for p in engine.time_breakpoints(k, u) if 0.0 < p < horizon)})

    def integrand(t):
        return math.exp(-lam * t) * engine.evaluate_at(k, u, t)

    pieces = []
    for a, b in zip(points[:-1], points[1:]):
        value, _ = integrate.quad(integrand, a, b, epsabs=1e-13, epsrel=1e-12, limit=50)
        pieces.append(value)
    resolvent = resolvent_eval(f, lam, x, n_max, g, spec)
    return LaplaceCheck(
        quadrature=math.fsum(pieces),
        resolvent=resolvent.value,
        quadrature_bound=scale * math.exp(-lam * horizon) / lam,
        resolvent_bound=resolvent.truncation_bound,
    )
