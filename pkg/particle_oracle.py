"""区间并集上精确展开的蒙特卡洛交叉验证。

粒子以并行数组（区间下标、局部位置、剩余时间）存放。每次穿越边界时，
从以 (seed, 穿越次数) 为键的计数器型 Philox 流中为每个粒子抽取一个均匀数，
因此粒子 i 的结果与存活粒子的数量无关。
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from config import MONTE_CARLO_DEFAULTS
from densities import counter_stream, mass
from errors import SignedDensityError, UnsupportedGeometryError
from geometry import IntervalUnion

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleEstimate:
    mass: float
    std_error: float
    n_particles: int
    escaped: int
    capped: int

    def agrees_with(self, exact, atol):
        return abs(self.mass - exact) <= atol


def _initial_particles(f, n, rng):
    rows = f.pieces()
    left_local = np.array([r[1] - f.geometry.left(r[0]) for r in rows])
    width = np.array([r[2] - r[1] for r in rows])
    weight = np.array([r[3] for r in rows]) * width
    cdf = np.cumsum(weight) / weight.sum()
    u = rng.random((n, 2))
    piece = np.minimum(np.searchsorted(cdf, u[:, 0], side='right'), len(rows) - 1)
    interval = np.array([r[0] for r in rows], dtype=np.int64)[piece]
    position = left_local[piece] + u[:, 1] * width[piece]
    return interval, position


def estimate_mass(f, t, g, spec, n=MONTE_CARLO_DEFAULTS['n_particles'], seed=MONTE_CARLO_DEFAULTS['seed'],
                  max_jumps=MONTE_CARLO_DEFAULTS['max_jumps']):
    """
    跟踪 n 个粒子穿过 H 的边界跳跃，估计 ||V_H(t)f||
        t: 时间
        f: 非负 PiecewiseDensity
        n: 粒子数
    Returns:
        OracleEstimate
    """
    if not isinstance(g, IntervalUnion) or spec.kind == 'specular':
        raise UnsupportedGeometryError("the particle oracle runs on interval unions")
    if not f.is_nonnegative():
        raise SignedDensityError("the particle oracle samples from a nonnegative density")
    if t < 0 or n < 1:
        raise ValueError("need t >= 0 and at least one particle")
    total = mass(f)
    if total == 0:
        return OracleEstimate(0.0, 0.0, n, 0, 0)

    interval, position = _initial_particles(f, n, counter_stream(seed, 0))
    remaining = np.full(n, float(t))
    alive = np.ones(n, dtype=bool)
    inside = np.zeros(n, dtype=bool)
    escaped = 0

    for jump in range(max_jumps):
        moving = alive & ~inside
        if not moving.any():
            break
        idx = np.flatnonzero(moving)
        exit_time = g.deltas(interval[idx]) - position[idx]
        stays = remaining[idx] < exit_time
        inside[idx[stays]] = True

        out = idx[~stays]
        remaining[out] -= exit_time[~stays]
        draws = counter_stream(seed, jump + 1).random(n)
        for k in np.unique(interval[out]):
            group = out[interval[out] == k]
            tail = spec.max_transit_after(int(k), g)
            # 剩余时间足以穿过之后所有区间: 已逃逸
            gone = remaining[group] >= tail
            escaped += int(gone.sum())
            alive[group[gone]] = False
            group = group[~gone]

            targets = spec.targets(int(k), g)
            if not targets:
                alive[group] = False
                continue
            dest = np.array([j for j, _ in targets], dtype=np.int64)
            cum = np.cumsum([w for _, w in targets])
            pick = np.searchsorted(cum, draws[group], side='right')
            lost = pick >= len(dest)
            alive[group[lost]] = False
            kept = group[~lost]
            interval[kept] = dest[pick[~lost]]
            position[kept] = 0.0
    capped = int((alive & ~inside).sum())
    if capped:
        logger.warning("%d particles still moving after %d jumps; counted as lost", capped, max_jumps)
    p = float((alive & inside).sum()) / n
    return OracleEstimate(
        mass=total * p,
        std_error=total * math.sqrt(p * (1.0 - p) / n),
        n_particles=n,
        escaped=escaped,
        capped=capped,
    )
