"""相空间密度及其 L1 运算。

``PiecewiseDensity`` 是区间并集上的精确表示：每个区间一个 ``StepFunction``，
使用局部坐标 u = x - a_k，远离原点的极小区间也能保持完整精度。
``ParticleEnsemble`` 是台球上使用的带权粒子云。
"""
import logging
import math
from dataclasses import dataclass, replace
from types import MappingProxyType

import numpy as np

from errors import OutsideDomainError, UnsupportedGeometryError
from geometry import ConvexBilliard, IntervalUnion, billiard_flow

logger = logging.getLogger(__name__)

EDGE_ATOL = 1e-12


def counter_stream(seed, stream):
    """
    以种子为密钥的 Philox 计数器随机数发生器
        seed: 种子
        stream: 计数器分块编号，不同编号的随机序列互不重叠
    Returns:
        numpy Generator
    """
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 0, int(stream)]))


@dataclass(frozen=True, eq=False)
class StepFunction:
    """分段常数函数：在 [edges[i], edges[i+1]) 上取值 values[i]"""

    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.size == 0:
            edges = np.empty(0)
        elif edges.size != values.size + 1 or not np.all(np.diff(edges) > 0):
            raise ValueError("step function needs strictly increasing edges, one more than values")
        object.__setattr__(self, 'edges', edges)
        object.__setattr__(self, 'values', values)

    @classmethod
    def zero(cls):
        return cls(np.empty(0), np.empty(0))

    @classmethod
    def constant(cls, lo, hi, value=1.0):
        if hi <= lo or value == 0:
            return cls.zero()
        return cls(np.array([lo, hi]), np.array([value]))

    @property
    def is_zero(self):
        return self.values.size == 0

    @property
    def support(self):
        if self.is_zero:
            return None
        return float(self.edges[0]), float(self.edges[-1])

    def canonical(self):
        """合并相等的相邻段，去掉两端的零段"""
        if self.is_zero:
            return self
        keep = np.r_[True, self.values[1:] != self.values[:-1]]
        values = self.values[keep]
        edges = np.r_[self.edges[:-1][keep], self.edges[-1]]
        nonzero = np.flatnonzero(values != 0)
        if nonzero.size == 0:
            return StepFunction.zero()
        first, last = nonzero[0], nonzero[-1]
        return StepFunction(edges[first:last + 2], values[first:last + 1])

    def shift(self, d):
        if self.is_zero:
            return self
        return StepFunction(self.edges + d, self.values)

    def reflect(self, c):
        """x -> f(c - x)"""
        if self.is_zero:
            return self
        return StepFunction(c - self.edges[::-1], self.values[::-1])

    def scale(self, c):
        if self.is_zero or c == 0:
            return StepFunction.zero()
        return StepFunction(self.edges, self.values * c)

    def clip(self, lo, hi):
        if self.is_zero or hi <= lo or hi <= self.edges[0] or lo >= self.edges[-1]:
            return StepFunction.zero()
        e = np.clip(self.edges, lo, hi)
        keep = np.diff(e) > 0
        if not keep.any():
            return StepFunction.zero()
        left = e[:-1][keep]
        right = e[1:][keep]
        return StepFunction(np.r_[left, right[-1]], self.values[keep]).canonical()

    def integral(self, lo=-math.inf, hi=math.inf):
        if self.is_zero:
            return 0.0
        e = np.clip(self.edges, lo, hi)
        return float(np.dot(self.values, np.diff(e)))

    def abs_integral(self, lo=-math.inf, hi=math.inf):
        if self.is_zero:
            return 0.0
        e = np.clip(self.edges, lo, hi)
        return float(np.dot(np.abs(self.values), np.diff(e)))

    def exp_integral(self, lam):
        """int f(s) exp(-lam s) ds 的闭式解"""
        if self.is_zero:
            return 0.0
        left = self.edges[:-1]
        width = np.diff(self.edges)
        return float(np.sum(self.values * np.exp(-lam * left) * -np.expm1(-lam * width)) / lam)

    def min_value(self):
        if self.is_zero:
            return 0.0
        return min(float(self.values.min()), 0.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_zero:
            return np.zeros_like(x)
        idx = np.searchsorted(self.edges, x, side='right') - 1
        inside = (idx >= 0) & (idx < self.values.size)
        return np.where(inside, self.values[np.clip(idx, 0, self.values.size - 1)], 0.0)

    def combine(self, other, op):
        if self.is_zero and other.is_zero:
            return self
        edges = np.union1d(self.edges, other.edges)
        if edges.size < 2:
            return StepFunction.zero()
        mids = 0.5 * (edges[:-1] + edges[1:])
        return StepFunction(edges, op(self(mids), other(mids))).canonical()

    def __add__(self, other):
        if self.is_zero:
            return other
        if other.is_zero:
            return self
        return self.combine(other, np.add)

    def __sub__(self, other):
        if other.is_zero:
            return self
        return self.combine(other, np.subtract)


# ---------------------------------------------------------------------------
# 区间并集上的分段常数密度
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PiecewiseDensity:
    geometry: IntervalUnion
    parts: dict

    def __post_init__(self):
        clean = {}
        for k in sorted(self.parts):
            part = self.parts[k].canonical()
            if part.is_zero:
                continue
            if not self.geometry.has(k):
                raise OutsideDomainError(f"interval index {k} does not exist")
            lo, hi = part.support
            if lo < -EDGE_ATOL or hi > self.geometry.delta(k) + EDGE_ATOL:
                raise OutsideDomainError(f"piece ({lo}, {hi}) leaves I_{k}")
            clean[k] = part
        object.__setattr__(self, 'parts', MappingProxyType(clean))

    @classmethod
    def zero(cls, geometry):
        return cls(geometry, {})

    @classmethod
    def from_pieces(cls, geometry, pieces):
        """
        由绝对坐标的 (left, right, value) 三元组构建密度
            geometry: IntervalUnion
            pieces: 三元组列表，每段必须落在同一个区间内
        Returns:
            PiecewiseDensity
        """
        parts = {}
        for left, right, value in pieces:
            if not right > left:
                raise ValueError(f"piece ({left}, {right}) is empty")
            k, _ = geometry.locate(0.5 * (left + right))
            a = geometry.left(k)
            lo, hi = left - a, right - a
            if lo < -EDGE_ATOL or hi > geometry.delta(k) + EDGE_ATOL:
                raise OutsideDomainError(f"piece ({left}, {right}) is not contained in I_{k}")
            lo, hi = max(lo, 0.0), min(hi, geometry.delta(k))
            parts[k] = parts.get(k, StepFunction.zero()) + StepFunction.constant(lo, hi, value)
        return cls(geometry, parts)

    @classmethod
    def indicator(cls, geometry, left, right, value=1.0):
        return cls.from_pieces(geometry, [(left, right, value)])

    @property
    def intervals(self):
        return list(self.parts)

    @property
    def is_zero(self):
        return not self.parts

    def part(self, k):
        return self.parts.get(k, StepFunction.zero())

    def pieces(self):
        """按区间顺序给出绝对坐标的 (k, left, right, value) 行"""
        rows = []
        for k, part in self.parts.items():
            a = self.geometry.left(k)
            for lo, hi, value in zip(part.edges[:-1], part.edges[1:], part.values):
                rows.append((k, a + float(lo), a + float(hi), float(value)))
        return rows

    def is_nonnegative(self, atol=0.0):
        return all(part.min_value() >= -atol for part in self.parts.values())

    def min_value(self):
        return min((part.min_value() for part in self.parts.values()), default=0.0)

    def integral_over(self, k):
        return self.part(k).integral()

    def evaluate(self, x):
        k, u = self.geometry.locate(x)
        return float(self.part(k)(u))

    def map_parts(self, fn):
        return PiecewiseDensity(self.geometry, {k: fn(k, part) for k, part in self.parts.items()})

    def scale(self, c):
        return self.map_parts(lambda _, part: part.scale(c))

    def _merge(self, other, op):
        keys = set(self.parts) | set(other.parts)
        return PiecewiseDensity(self.geometry, {k: op(self.part(k), other.part(k)) for k in keys})

    def __add__(self, other):
        return self._merge(other, lambda a, b: a + b)

    def __sub__(self, other):
        return self._merge(other, lambda a, b: a - b)

    def l1_distance(self, other):
        return mass(self - other)


# ---------------------------------------------------------------------------
# 台球上的粒子系综
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    positions: np.ndarray
    velocities: np.ndarray
    weights: np.ndarray
    rebounds: np.ndarray
    degenerate: np.ndarray
    seed: int

    @property
    def size(self):
        return len(self.weights)

    @property
    def degenerate_count(self):
        return int(self.degenerate.sum())

    def rebound_histogram(self):
        """恰好反弹 k 次的粒子权重之和（||U_k(t)f|| 的样本估计）"""
        if self.size == 0:
            return np.zeros(1)
        return np.bincount(self.rebounds, weights=self.weights)

    def trace_norms(self):
        """第 n 项 = 已完成第 n+1 次反弹的粒子权重"""
        hist = self.rebound_histogram()
        tail = np.cumsum(hist[::-1])[::-1]
        return np.r_[tail[1:], 0.0]


def sample_ensemble(g, n, seed, mass=1.0, region=None):
    """
    抽取 n 个总权重为 mass 的粒子
        g: ConvexBilliard
        n: 粒子数
        seed: 种子；位置与速度使用不同的 Philox 计数器分块，第 i 个粒子的抽样固定
        mass: 总权重
        region: None 表示整张台面，或子圆盘 (center, radius)
    Returns:
        ParticleEnsemble
    """
    if not isinstance(g, ConvexBilliard):
        raise UnsupportedGeometryError("ensembles live on billiard geometries")
    if n < 1:
        raise ValueError("ensemble needs at least one particle")
    center = radius = None
    if region is not None:
        center, radius = region
        inner = -float(g.domain.signed_distance(np.asarray(center, dtype=float))[0])
        if radius <= 0 or radius > inner:
            raise OutsideDomainError(f"sampling disk {center}, r={radius} is not inside the table")
    positions = g.domain.sample(n, counter_stream(seed, 0), center=center, radius=radius)
    velocities = g.velocity.sample(n, counter_stream(seed, 1))
    return ParticleEnsemble(
        positions=positions,
        velocities=velocities,
        weights=np.full(n, mass / n),
        rebounds=np.zeros(n, dtype=np.int64),
        degenerate=np.zeros(n, dtype=bool),
        seed=int(seed),
    )


# ---------------------------------------------------------------------------
# 操作
# ---------------------------------------------------------------------------

def mass(f):
    """||f||_X：分段密度精确计算，粒子系综取总权重"""
    if isinstance(f, ParticleEnsemble):
        return float(f.weights.sum())
    return float(sum(part.abs_integral() for part in f.parts.values()))


def free_stream(f, t, g=None):
    """
    自由输运 U_0(t)f
        f: PiecewiseDensity
        t: 时间，t >= 0
        g: 几何，默认取 f.geometry
    Returns:
        PiecewiseDensity: 右移 t，越过 b_k 的部分丢弃，[a_k, a_k + t) 上为零
    """
    if t < 0:
        raise ValueError("free streaming needs t >= 0")
    g = g or f.geometry
    if t == 0:
        return f
    return PiecewiseDensity(g, {k: part.shift(t).clip(0.0, g.delta(k)) for k, part in f.parts.items()})


def restrict(f, k):
    """f * chi_{I_k}"""
    return PiecewiseDensity(f.geometry, {k: f.part(k)} if k in f.parts else {})


def transport_ensemble(e, t, g):
    """
    镜面反射边界下的 V_H(t)：每个粒子沿台球流推进
        e: ParticleEnsemble
        t: 时间，t >= 0
        g: ConvexBilliard
    Returns:
        ParticleEnsemble: 权重不变，反弹计数累加，退化粒子冻结
    """
    if t < 0:
        raise ValueError("transport needs t >= 0")
    if t == 0:
        return e
    before = e.degenerate_count
    x, v, rebounds, degenerate = billiard_flow(e.positions, e.velocities, t, g, e.rebounds, e.degenerate)
    moved = replace(e, positions=x, velocities=v, rebounds=rebounds, degenerate=degenerate)
    if moved.degenerate_count > before:
        logger.info("%d particles frozen at degenerate rebounds", moved.degenerate_count - before)
    return moved


__all__ = [
    'ParticleEnsemble',
    'PiecewiseDensity',
    'StepFunction',
    'counter_stream',
    'free_stream',
    'mass',
    'restrict',
    'sample_ensemble',
    'transport_ensemble',
]
