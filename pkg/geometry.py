"""相空间几何、特征线流与停留时间。

支持两种几何:

* ``IntervalUnion``: Omega 为直线上开区间 (a_k, b_k) 的并，单位漂移
  Phi(x, t) = x + t。Gamma_- = {a_k}，Gamma_+ = {b_k}。
* ``ConvexBilliard``: Omega = D x V，D 为圆盘或凸多边形，
  Phi((x, v), t) = (x + v t, v)。

所有对象不可变，本模块的函数均无副作用。
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from config import BILLIARD_DEFAULTS
from errors import (
    BoundaryPointError,
    NoBackwardExitError,
    OutsideDomainError,
    StayTimeError,
    UnsupportedGeometryError,
)

logger = logging.getLogger(__name__)

BOUNDARY_ATOL = 1e-12


@dataclass(frozen=True)
class LinePoint:
    x: float


@dataclass(frozen=True)
class PlanePoint:
    x: tuple
    v: tuple

    @property
    def position(self):
        return np.asarray(self.x, dtype=float)

    @property
    def velocity(self):
        return np.asarray(self.v, dtype=float)


# ---------------------------------------------------------------------------
# 1D: 区间并集
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntervalRule:
    """区间生成规则: a_k = offset + spacing*k，Delta_k = width（uniform）或
    width*ratio**k（geometric）"""

    kind: str
    spacing: float
    width: float
    offset: float = 0.0
    ratio: float = 1.0

    def __post_init__(self):
        if self.kind not in ('uniform', 'geometric'):
            raise ValueError(f"unknown interval rule: {self.kind}")
        if not (self.spacing > 0 and self.width > 0):
            raise ValueError("spacing and width must be positive")
        if self.width >= self.spacing:
            raise ValueError("width must be smaller than spacing (b_k < a_{k+1})")
        if self.kind == 'geometric' and not (0 < self.ratio <= 1):
            raise ValueError("geometric ratio must lie in (0, 1]")

    def left(self, k):
        return self.offset + self.spacing * k

    def delta(self, k):
        if self.kind == 'uniform':
            return self.width
        return self.width * self.ratio ** k

    def deltas(self, indices):
        indices = np.asarray(indices)
        if self.kind == 'uniform':
            return np.full(indices.shape, self.width, dtype=float)
        return self.width * np.power(self.ratio, indices.astype(float))

    def transit_tail(self, m):
        if self.kind == 'uniform' or self.ratio == 1:
            return math.inf
        return self.width * self.ratio ** (m + 1) / (1 - self.ratio)


@dataclass(frozen=True)
class IntervalUnion:
    """Omega = U_k (a_k, b_k)，由显式有限列表或生成规则给出"""

    intervals: tuple = ()
    rule: IntervalRule = None
    name: str = ''

    def __post_init__(self):
        if (self.rule is None) == (not self.intervals):
            raise ValueError("give either explicit intervals or a generator rule")
        if self.intervals:
            prev_right = -math.inf
            for k, (a, b) in enumerate(self.intervals):
                if not (prev_right < a < b):
                    raise ValueError(f"interval {k} = ({a}, {b}) breaks a_k < b_k < a_(k+1)")
                prev_right = b

    @classmethod
    def uniform(cls, spacing=2.0, width=1.0, offset=0.0, name='unit-ladder'):
        return cls(rule=IntervalRule('uniform', spacing, width, offset), name=name)

    @classmethod
    def geometric(cls, spacing=3.0, width=1.0, ratio=0.5, offset=0.0, name='geometric-ladder'):
        return cls(rule=IntervalRule('geometric', spacing, width, offset, ratio), name=name)

    @property
    def count(self):
        """区间个数；无穷生成规则返回 None"""
        return None if self.rule is not None else len(self.intervals)

    def has(self, k):
        return k >= 0 and (self.count is None or k < self.count)

    def left(self, k):
        if self.rule is not None:
            return self.rule.left(k)
        return self.intervals[k][0]

    def delta(self, k):
        if self.rule is not None:
            return self.rule.delta(k)
        a, b = self.intervals[k]
        return b - a

    def right(self, k):
        if self.rule is not None:
            return self.rule.left(k) + self.rule.delta(k)
        return self.intervals[k][1]

    def deltas(self, indices):
        if self.rule is not None:
            return self.rule.deltas(indices)
        table = np.array([b - a for a, b in self.intervals])
        return table[np.asarray(indices)]

    def transit_tail(self, m):
        """R_m = sum_{j>m} Delta_j：离开 b_m 之后还能停留在 Omega 内的时间"""
        if self.rule is not None:
            return self.rule.transit_tail(m)
        return float(sum(self.delta(j) for j in range(m + 1, len(self.intervals))))

    def reach(self, k, t):
        """
        从 I_k 出发、在时间 t 内最多经过的区间数
            k: 起始区间编号
            t: 时间
        Returns:
            int: 满足 sum_{j=k+1}^{k+n} Delta_j >= t 的最小 n；不存在时返回 None
        """
        if t <= 0:
            return 0
        if self.rule is not None and self.rule.kind == 'uniform':
            return max(1, math.ceil(t / self.rule.width))
        if self.transit_tail(k) <= t and self.count is None:
            return None
        acc = 0.0
        n = 0
        while acc < t:
            n += 1
            if not self.has(k + n):
                return n - 1
            acc += self.delta(k + n)
        return n

    def locate(self, x):
        """返回 (k, u)，x = a_k + u，0 < u < Delta_k"""
        k = self._candidate(x)
        if k is None:
            raise OutsideDomainError(f"x={x} lies outside the interval union")
        u = x - self.left(k)
        delta = self.delta(k)
        if abs(u) <= BOUNDARY_ATOL or abs(u - delta) <= BOUNDARY_ATOL:
            raise BoundaryPointError(f"x={x} is an endpoint of I_{k}")
        if u < 0 or u > delta:
            raise OutsideDomainError(f"x={x} lies in a gap of the interval union")
        return k, u

    def outgoing_index(self, x):
        k = self._candidate(x)
        if k is not None and abs(x - self.right(k)) <= BOUNDARY_ATOL:
            return k
        raise OutsideDomainError(f"x={x} is not an outgoing boundary point b_k")

    def _candidate(self, x):
        if self.rule is not None:
            k = math.floor((x - self.rule.offset) / self.rule.spacing)
            if k >= 0 and abs(x - self.left(k + 1)) <= BOUNDARY_ATOL:
                k += 1
            return k if k >= 0 else None
        lefts = [a for a, _ in self.intervals]
        k = int(np.searchsorted(lefts, x + BOUNDARY_ATOL, side='right')) - 1
        return k if k >= 0 else None


# ---------------------------------------------------------------------------
# 2D: 凸台球
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Disk:
    center: tuple
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("disk radius must be positive")

    @property
    def diameter(self):
        return 2.0 * self.radius

    def signed_distance(self, x):
        d = np.atleast_2d(x) - np.asarray(self.center, dtype=float)
        return np.hypot(d[:, 0], d[:, 1]) - self.radius

    def forward_exit(self, x, v):
        # |x + s v - c|^2 = R^2 的数值稳定求根
        d = x - np.asarray(self.center, dtype=float)
        a = np.einsum('ij,ij->i', v, v)
        b = 2.0 * np.einsum('ij,ij->i', v, d)
        cc = np.einsum('ij,ij->i', d, d) - self.radius ** 2
        sq = np.sqrt(np.maximum(b * b - 4.0 * a * cc, 0.0))
        q = -0.5 * (b + np.copysign(sq, b))
        with np.errstate(divide='ignore', invalid='ignore'):
            r1 = q / a
            r2 = np.where(q != 0.0, cc / q, 0.0)
        s = np.maximum(np.maximum(r1, r2), 0.0)
        hit = x + s[:, None] * v
        normals = hit - np.asarray(self.center, dtype=float)
        normals /= np.hypot(normals[:, 0], normals[:, 1])[:, None]
        return s, normals, np.zeros(len(s), dtype=bool)

    def normal(self, x):
        d = np.asarray(x, dtype=float) - np.asarray(self.center, dtype=float)
        return d / np.hypot(*d)

    def skip_chords(self, x, v, budget):
        """
        刚反弹的粒子一次跳过若干整条弦

        圆盘内同一轨道的弦长相同，每次反弹都把 (x, v) 绕圆心旋转同一角度
        2*beta，cos(beta) = |(x - c) x v| / (|v| R)。预算中留出一条弦给逐步推进。
            x, v: 位于边界上、已反射的粒子位置与速度
            budget: 每个粒子剩余的时间
        Returns:
            tuple: (新位置, 新速度, 跳过的弦数, 消耗的时间)
        """
        c = np.asarray(self.center, dtype=float)
        d = x - c
        speed = np.hypot(v[:, 0], v[:, 1])
        cross = d[:, 0] * v[:, 1] - d[:, 1] * v[:, 0]
        beta = np.arccos(np.clip(np.abs(cross) / (speed * self.radius), 0.0, 1.0))
        chord_time = 2.0 * self.radius * np.sin(beta) / speed
        with np.errstate(divide='ignore', invalid='ignore'):
            m = np.where(chord_time > 0, np.floor(budget / chord_time) - 1.0, 0.0)
        m = np.maximum(m, 0.0)
        angle = np.sign(cross) * 2.0 * beta * m
        cos_a, sin_a = np.cos(angle), np.sin(angle)

        def rotate(w):
            return np.column_stack((cos_a * w[:, 0] - sin_a * w[:, 1], sin_a * w[:, 0] + cos_a * w[:, 1]))

        return c + rotate(d), rotate(v), m.astype(np.int64), m * chord_time

    def sample(self, n, rng, center=None, radius=None):
        c = np.asarray(self.center if center is None else center, dtype=float)
        rad = self.radius if radius is None else radius
        u = rng.random((n, 2))
        rho = rad * np.sqrt(u[:, 0])
        theta = 2.0 * np.pi * u[:, 1]
        return c + np.column_stack((rho * np.cos(theta), rho * np.sin(theta)))


@dataclass(frozen=True)
class ConvexPolygon:
    vertices: tuple
    vertex_eps: float = BILLIARD_DEFAULTS['vertex_eps']
    _normals: np.ndarray = field(init=False, repr=False, compare=False)
    _offsets: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[0] < 3 or verts.shape[1] != 2:
            raise ValueError("polygon needs at least three 2D vertices")
        edges = np.roll(verts, -1, axis=0) - verts
        cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
        if not np.all(cross > 0):
            raise ValueError("polygon must be convex with counter-clockwise vertices")
        lengths = np.hypot(edges[:, 0], edges[:, 1])
        normals = np.column_stack((edges[:, 1], -edges[:, 0])) / lengths[:, None]
        object.__setattr__(self, '_normals', normals)
        object.__setattr__(self, '_offsets', np.einsum('ij,ij->i', normals, verts))

    @property
    def diameter(self):
        verts = np.asarray(self.vertices, dtype=float)
        diff = verts[:, None, :] - verts[None, :, :]
        return float(np.max(np.hypot(diff[..., 0], diff[..., 1])))

    def signed_distance(self, x):
        x = np.atleast_2d(x)
        return np.max(x @ self._normals.T - self._offsets, axis=1)

    def forward_exit(self, x, v):
        denom = v @ self._normals.T
        dist = self._offsets - x @ self._normals.T
        with np.errstate(divide='ignore', invalid='ignore'):
            times = np.where(denom > 0.0, dist / denom, np.inf)
        edge = np.argmin(times, axis=1)
        s = np.maximum(times[np.arange(len(x)), edge], 0.0)
        hit = x + s[:, None] * v
        verts = np.asarray(self.vertices, dtype=float)
        gap = np.min(np.hypot(hit[:, None, 0] - verts[None, :, 0], hit[:, None, 1] - verts[None, :, 1]), axis=1)
        at_vertex = gap <= self.vertex_eps * max(1.0, self.diameter)
        return s, self._normals[edge], at_vertex

    def normal(self, x):
        x = np.asarray(x, dtype=float)
        gaps = np.abs(self._normals @ x - self._offsets)
        edge = int(np.argmin(gaps))
        return self._normals[edge]

    def sample(self, n, rng, center=None, radius=None):
        if center is not None:
            return Disk(tuple(center), radius).sample(n, rng)
        verts = np.asarray(self.vertices, dtype=float)
        p0, p1, p2 = verts[0], verts[1:-1], verts[2:]
        e1, e2 = p1 - p0, p2 - p0
        tri_area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        u = rng.random((n, 3))
        tri = np.searchsorted(np.cumsum(tri_area) / tri_area.sum(), u[:, 0], side='right')
        tri = np.minimum(tri, len(tri_area) - 1)
        r1 = np.sqrt(u[:, 1])
        a = 1.0 - r1
        b = r1 * (1.0 - u[:, 2])
        c = r1 * u[:, 2]
        return a[:, None] * p0 + b[:, None] * p1[tri] + c[:, None] * p2[tri]


@dataclass(frozen=True)
class VelocitySpec:
    """各向同性速度分布：带权的有限速度集合，或环形区域上的均匀分布"""

    kind: str = 'speeds'
    speeds: tuple = (1.0,)
    weights: tuple = (1.0,)
    min_speed: float = 0.0
    max_speed: float = 0.0

    def __post_init__(self):
        if self.kind == 'speeds':
            if not self.speeds or len(self.speeds) != len(self.weights):
                raise ValueError("speeds and weights must be non-empty and of equal length")
            if min(self.speeds) <= 0 or min(self.weights) < 0 or sum(self.weights) <= 0:
                raise ValueError("speeds must be positive and weights nonnegative")
        elif self.kind == 'annulus':
            if not (0 < self.min_speed <= self.max_speed):
                raise ValueError("annulus needs 0 < min_speed <= max_speed")
        else:
            raise ValueError(f"unknown velocity law: {self.kind}")

    @property
    def fastest(self):
        return max(self.speeds) if self.kind == 'speeds' else self.max_speed

    def sample(self, n, rng):
        u = rng.random((n, 2))
        if self.kind == 'speeds':
            cdf = np.cumsum(self.weights) / np.sum(self.weights)
            idx = np.minimum(np.searchsorted(cdf, u[:, 0], side='right'), len(cdf) - 1)
            speed = np.asarray(self.speeds, dtype=float)[idx]
        else:
            lo2, hi2 = self.min_speed ** 2, self.max_speed ** 2
            speed = np.sqrt(lo2 + u[:, 0] * (hi2 - lo2))
        theta = 2.0 * np.pi * u[:, 1]
        return np.column_stack((speed * np.cos(theta), speed * np.sin(theta)))


@dataclass(frozen=True)
class ConvexBilliard:
    domain: object
    velocity: VelocitySpec = VelocitySpec()
    tangent_eps: float = BILLIARD_DEFAULTS['tangent_eps']
    name: str = ''

    def exit_times(self, x, v):
        """向前出射时间、碰撞点的外法向以及退化标记"""
        s, normals, degenerate = self.domain.forward_exit(x, v)
        speed = np.hypot(v[:, 0], v[:, 1])
        grazing = np.abs(np.einsum('ij,ij->i', v, normals)) < self.tangent_eps * speed
        return s, normals, degenerate | grazing

    def classify(self, x):
        dist = float(self.domain.signed_distance(np.asarray(x, dtype=float))[0])
        scale = max(1.0, self.domain.diameter)
        if abs(dist) <= BOUNDARY_ATOL * scale:
            return 'boundary'
        return 'interior' if dist < 0 else 'outside'


# ---------------------------------------------------------------------------
# 流操作
# ---------------------------------------------------------------------------

def stay_times(p, g):
    """
    内部相点的停留时间
        p: LinePoint 或 PlanePoint
        g: 几何
    Returns:
        tuple: (tau_minus(p), tau_plus(p))
    """
    if isinstance(g, IntervalUnion):
        k, u = g.locate(p.x)
        return u, g.delta(k) - u
    if isinstance(g, ConvexBilliard):
        x, v = _interior_plane_point(p, g)
        forward, _, _ = g.domain.forward_exit(x[None, :], v[None, :])
        backward, _, _ = g.domain.forward_exit(x[None, :], -v[None, :])
        return float(backward[0]), float(forward[0])
    raise UnsupportedGeometryError(f"unknown geometry: {type(g).__name__}")


def advect(p, t, g):
    """
    沿特征线推进 Phi(p, t)，只在 Omega 内部有效；穿越边界由输运层处理
        p: 相点
        t: 时间，须满足 -tau_minus(p) < t < tau_plus(p)
        g: 几何
    Returns:
        推进后的相点；越界时抛出 StayTimeError
    """
    tau_minus, tau_plus = stay_times(p, g)
    if t >= tau_plus:
        raise StayTimeError('tau_plus', t, tau_plus)
    if t <= -tau_minus:
        raise StayTimeError('tau_minus', t, tau_minus)
    if isinstance(g, IntervalUnion):
        return LinePoint(p.x + t)
    x = p.position + t * p.velocity
    return PlanePoint(tuple(x), tuple(p.v))


def boundary_foot(z, g):
    """出射点 z 对应的入射足点 (Phi(z, -tau_minus(z)), tau_minus(z))"""
    if isinstance(g, IntervalUnion):
        k = g.outgoing_index(z.x)
        return LinePoint(g.left(k)), g.delta(k)
    if isinstance(g, ConvexBilliard):
        x, v = z.position, z.velocity
        if g.classify(x) != 'boundary':
            raise OutsideDomainError(f"{tuple(x)} is not a boundary point")
        if float(np.dot(v, g.domain.normal(x))) <= 0:
            raise OutsideDomainError("velocity does not point outward: not in Gamma_+")
        s, _, _ = g.domain.forward_exit(x[None, :], -v[None, :])
        tau = float(s[0])
        if not math.isfinite(tau) or tau <= 0:
            raise NoBackwardExitError(f"no finite backward exit from {tuple(x)}")
        y = x - tau * v
        return PlanePoint(tuple(y), tuple(v)), tau
    raise UnsupportedGeometryError(f"unknown geometry: {type(g).__name__}")


@dataclass(frozen=True)
class ReboundSequence:
    events: tuple
    degenerate: bool = False

    @property
    def times(self):
        return [e[0] for e in self.events]

    def __len__(self):
        return len(self.events)


def rebound_sequence(p, t_max, g):
    """
    逐次计算台球反弹
        p: 内部相点
        t_max: 时间上限
        g: ConvexBilliard
    Returns:
        ReboundSequence: t_k <= t_max 的反弹时间及反射后的位置与速度；
        遇到掠射或顶点时停止并标记 degenerate
    """
    if not isinstance(g, ConvexBilliard):
        raise UnsupportedGeometryError("rebound sequences need a billiard geometry")
    x, v = _interior_plane_point(p, g)
    events = []
    elapsed = 0.0
    for _ in range(BILLIARD_DEFAULTS['max_rebounds']):
        s, normals, degenerate = g.exit_times(x[None, :], v[None, :])
        if elapsed + s[0] > t_max:
            break
        elapsed += float(s[0])
        x = x + s[0] * v
        if degenerate[0]:
            logger.debug("degenerate rebound at t=%s, x=%s", elapsed, x)
            return ReboundSequence(tuple(events), degenerate=True)
        n = normals[0]
        v = v - 2.0 * np.dot(v, n) * n
        events.append((elapsed, x.copy(), v.copy()))
    return ReboundSequence(tuple(events))


def billiard_flow(x, v, t, g, rebounds, degenerate):
    """
    粒子数组沿台球流推进时间 t（向量化）
        x, v: 位置与速度数组
        t: 时间
        g: ConvexBilliard
        rebounds, degenerate: 当前反弹计数与退化标记
    Returns:
        tuple: 新的 (x, v, rebounds, degenerate)；退化粒子原地冻结
    """
    x = np.array(x, dtype=float)
    v = np.array(v, dtype=float)
    rebounds = np.array(rebounds, dtype=np.int64)
    degenerate = np.array(degenerate, dtype=bool)
    remaining = np.full(len(x), float(t))
    active = ~degenerate & (remaining > 0)
    while active.any():
        idx = np.flatnonzero(active)
        s, normals, bad = g.exit_times(x[idx], v[idx])
        rem = remaining[idx]
        stop = s > rem

        done = idx[stop]
        x[done] += rem[stop, None] * v[done]
        remaining[done] = 0.0

        hit = idx[~stop]
        step = s[~stop]
        x[hit] += step[:, None] * v[hit]
        remaining[hit] = rem[~stop] - step
        frozen = bad[~stop]
        degenerate[hit[frozen]] = True

        ok = hit[~frozen]
        n = normals[~stop][~frozen]
        dot = np.einsum('ij,ij->i', v[ok], n)
        v[ok] -= 2.0 * dot[:, None] * n
        rebounds[ok] += 1
        if hasattr(g.domain, 'skip_chords') and ok.size:
            x[ok], v[ok], skipped, spent = g.domain.skip_chords(x[ok], v[ok], remaining[ok])
            rebounds[ok] += skipped
            remaining[ok] -= spent
        active = ~degenerate & (remaining > 0)
    return x, v, rebounds, degenerate


def _interior_plane_point(p, g):
    x, v = p.position, p.velocity
    if not np.hypot(*v) > 0:
        raise ValueError("billiard velocity must be nonzero")
    where = g.classify(x)
    if where == 'boundary':
        raise BoundaryPointError(f"{tuple(x)} lies on the boundary")
    if where == 'outside':
        raise OutsideDomainError(f"{tuple(x)} lies outside the billiard table")
    return x, v
