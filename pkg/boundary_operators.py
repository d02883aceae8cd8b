"""边界算子 H 以及 lambda 域算子 M_lambda、G_lambda。

这里只有区间并集的离散边界使用显式向量（{a_k} 与 {b_k} 上的计数测度）。
台球的镜面反射由粒子输运本身实现，本模块的函数对其一律拒绝。
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from types import MappingProxyType

from errors import UnsupportedGeometryError
from geometry import IntervalUnion, LinePoint

logger = logging.getLogger(__name__)

ROW_SUM_ATOL = 1e-12


class Side(str, Enum):
    INCOMING = 'incoming'
    OUTGOING = 'outgoing'


@dataclass(frozen=True, eq=False)
class BoundaryVector:
    """{a_k}（入射）或 {b_k}（出射）上有限支撑的向量"""

    entries: dict
    side: Side

    def __post_init__(self):
        clean = {int(k): float(v) for k, v in sorted(self.entries.items()) if v != 0}
        object.__setattr__(self, 'entries', MappingProxyType(clean))
        object.__setattr__(self, 'side', Side(self.side))

    @classmethod
    def zero(cls, side):
        return cls({}, side)

    @property
    def norm(self):
        return math.fsum(abs(v) for v in self.entries.values())

    @property
    def total(self):
        return math.fsum(self.entries.values())

    @property
    def support(self):
        return list(self.entries)

    def get(self, k):
        return self.entries.get(k, 0.0)

    def is_nonnegative(self):
        return all(v >= 0 for v in self.entries.values())

    def scale(self, c):
        return BoundaryVector({k: c * v for k, v in self.entries.items()}, self.side)

    def __add__(self, other):
        if other.side != self.side:
            raise ValueError("cannot add incoming and outgoing vectors")
        merged = dict(self.entries)
        for k, v in other.entries.items():
            merged[k] = merged.get(k, 0.0) + v
        return BoundaryVector(merged, self.side)

    def __sub__(self, other):
        return self + other.scale(-1.0)


@dataclass(frozen=True)
class BoundaryOperatorSpec:
    """
    边界算子 H_r = r*H，H 为平移、随机核或镜面反射
        kind: 'shift' | 'kernel' | 'specular'
        r: 缩放系数，0 < r <= 1
        rows: 核的行 ((k, ((j, P(k->j)), ...)), ...)，每行有限项；
              未列出的行为零（离开 b_k 的质量丢失）
    """

    kind: str = 'shift'
    r: float = 1.0
    rows: tuple = ()
    _table: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ('shift', 'kernel', 'specular'):
            raise ValueError(f"unknown boundary operator kind: {self.kind}")
        if not (0 < self.r <= 1):
            raise ValueError(f"scale r={self.r} must lie in (0, 1]")
        table = {}
        if self.kind == 'kernel':
            for k, row in self.rows:
                entries = tuple((int(j), float(p)) for j, p in row if p != 0)
                if any(p < 0 for _, p in entries):
                    raise ValueError(f"kernel row {k} has a negative entry")
                if math.fsum(p for _, p in entries) > 1 + ROW_SUM_ATOL:
                    raise ValueError(f"kernel row {k} sums above one")
                table[int(k)] = entries
            sup = max((math.fsum(p for _, p in row) for row in table.values()), default=0.0)
            if abs(sup - 1.0) > ROW_SUM_ATOL:
                raise ValueError(f"kernel must have unit norm (largest row sum is {sup})")
        object.__setattr__(self, '_table', MappingProxyType(table))

    def scaled(self, r):
        """H_{r'}，r' = r * self.r"""
        return replace(self, r=self.r * r)

    def targets(self, k, g=None):
        """[(j, weight)]，使 (H_r psi)(a_j) += weight * psi(b_k)"""
        if self.kind == 'shift':
            if g is not None and not g.has(k + 1):
                return []
            return [(k + 1, self.r)]
        if self.kind == 'kernel':
            return [(j, self.r * p) for j, p in self._table.get(k, ())]
        raise UnsupportedGeometryError("specular reflection acts through billiard transport")

    def max_transit_after(self, m, g):
        """离开 b_m 的粒子还能在 Omega 内停留的时间上界"""
        if self.kind == 'shift':
            return g.transit_tail(m)
        return math.inf


def apply_H(spec, psi, g=None):
    """
    作用边界算子
        spec: BoundaryOperatorSpec
        psi: 出射边界上的 BoundaryVector
        g: 几何
    Returns:
        BoundaryVector: 入射边界上的 H_r psi
    """
    if psi.side != Side.OUTGOING:
        raise ValueError("H acts on outgoing vectors")
    out = {}
    for k, value in psi.entries.items():
        for j, weight in spec.targets(k, g):
            out[j] = out.get(j, 0.0) + weight * value
    return BoundaryVector(out, Side.INCOMING)


def apply_H_to_fluxes(spec, fluxes, g):
    """与 apply_H 相同，作用于随时间变化的边界通量 {k: StepFunction}"""
    out = {}
    for k, flux in fluxes.items():
        for j, weight in spec.targets(k, g):
            term = flux.scale(weight)
            out[j] = out[j] + term if j in out else term
    return {j: flux for j, flux in out.items() if not flux.is_zero}


def M_lambda(u, lam, g):
    """(M_lambda u)(b_k) = u(a_k) exp(-lambda Delta_k)"""
    _require_positive(lam)
    if u.side != Side.INCOMING:
        raise ValueError("M_lambda acts on incoming vectors")
    return BoundaryVector({k: v * math.exp(-lam * g.delta(k)) for k, v in u.entries.items()}, Side.OUTGOING)


def G_lambda(f, lam, g):
    """
    (G_lambda f)(b_k) = int_0^{Delta_k} f(b_k - s) exp(-lambda s) ds，闭式计算
        f: PiecewiseDensity
        lam: lambda > 0
        g: IntervalUnion
    Returns:
        BoundaryVector: 出射边界上的向量
    """
    _require_positive(lam)
    out = {k: part.reflect(g.delta(k)).exp_integral(lam) for k, part in f.parts.items()}
    return BoundaryVector(out, Side.OUTGOING)


@dataclass(frozen=True)
class ResolventValue:
    value: float
    free_part: float
    boundary_part: float
    truncation_bound: float
    orders: int


def resolvent_eval(f, lam, x, n_max, g, spec):
    """
    截断的预解式求值 C_lambda f(x) + sum_{n<n_max} [Xi_lambda H (M_lambda H)^n G_lambda f](x)
        f: PiecewiseDensity
        lam: lambda > 0
        x: 求值点（区间内部）
        n_max: 保留的项数
        g, spec: 几何与边界算子
    Returns:
        ResolventValue: 值及截断误差界（第一个被略去的迭代项的范数）
    """
    _require_positive(lam)
    if not isinstance(g, IntervalUnion) or spec.kind == 'specular':
        raise UnsupportedGeometryError("pointwise resolvent needs a discrete boundary")
    if isinstance(x, LinePoint):
        x = x.x
    k, tau = g.locate(x)
    free_part = f.part(k).reflect(tau).clip(0.0, tau).exp_integral(lam)
    decay = math.exp(-lam * tau)
    u = G_lambda(f, lam, g)
    boundary_part = 0.0
    for _ in range(n_max):
        incoming = apply_H(spec, u, g)
        boundary_part += incoming.get(k) * decay
        u = M_lambda(incoming, lam, g)
    return ResolventValue(
        value=free_part + boundary_part,
        free_part=free_part,
        boundary_part=boundary_part,
        truncation_bound=u.norm,
        orders=n_max,
    )


def _require_positive(lam):
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
