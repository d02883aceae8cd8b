import math

import numpy as np
import pytest

from densities import (
    ParticleEnsemble,
    PiecewiseDensity,
    StepFunction,
    counter_stream,
    free_stream,
    mass,
    restrict,
    sample_ensemble,
    transport_ensemble,
)
from errors import OutsideDomainError, UnsupportedGeometryError
from geometry import ConvexBilliard, Disk, IntervalUnion

UNIT = IntervalUnion.uniform()
DISK = ConvexBilliard(Disk((0.0, 0.0), 1.0))


class TestStepFunction:
    def test_evaluation_is_left_closed(self):
        f = StepFunction(np.array([0.0, 1.0, 2.0]), np.array([3.0, -1.0]))
        assert f(0.0) == 3.0
        assert f(1.0) == -1.0
        assert f(2.0) == 0.0
        assert f(-0.1) == 0.0

    def test_integrals(self):
        f = StepFunction(np.array([0.0, 1.0, 2.0]), np.array([3.0, -1.0]))
        assert f.integral() == pytest.approx(2.0)
        assert f.abs_integral() == pytest.approx(4.0)
        assert f.integral(0.5, 1.5) == pytest.approx(1.0)
        assert f.abs_integral(0.5, 1.5) == pytest.approx(2.0)
        assert f.abs_integral(2.0, 5.0) == 0.0

    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
    def test_exp_integral_closed_form(self, lam):
        f = StepFunction.constant(0.0, 1.0)
        assert f.exp_integral(lam) == pytest.approx(-math.expm1(-lam) / lam, rel=1e-15)

    def test_reflect_shift_clip(self):
        f = StepFunction(np.array([0.0, 0.25, 1.0]), np.array([1.0, 2.0]))
        g = f.reflect(1.0)
        assert list(g.edges) == [0.0, 0.75, 1.0]
        assert list(g.values) == [2.0, 1.0]
        h = f.shift(0.5).clip(0.0, 1.0)
        assert list(h.edges) == [0.5, 0.75, 1.0]
        assert f.clip(2.0, 3.0).is_zero

    def test_canonical_merges_and_trims(self):
        f = StepFunction(np.array([0.0, 1.0, 2.0, 3.0, 4.0]), np.array([0.0, 1.0, 1.0, 0.0]))
        c = f.canonical()
        assert list(c.edges) == [1.0, 3.0]
        assert list(c.values) == [1.0]

    @pytest.mark.parametrize("edges, values", [
        ([0.0, 1.0, 2.0, 3.0, 4.0], [0.0, 1.0, 1.0, 0.0]),
        ([0.0, 0.5, 1.0], [2.0, -2.0]),
        ([0.0, 1.0], [0.0]),
    ])
    def test_canonical_is_idempotent(self, edges, values):
        once = StepFunction(np.array(edges), np.array(values)).canonical()
        twice = once.canonical()
        assert np.array_equal(once.edges, twice.edges)
        assert np.array_equal(once.values, twice.values)

    def test_sum_and_difference(self):
        a = StepFunction.constant(0.0, 1.0, 2.0)
        b = StepFunction.constant(0.5, 1.5, 1.0)
        assert (a + b).integral() == pytest.approx(3.0)
        assert (a - a).is_zero

    def test_rejects_bad_edges(self):
        with pytest.raises(ValueError):
            StepFunction(np.array([1.0, 0.0]), np.array([1.0]))


class TestPiecewiseDensity:
    def test_from_pieces_stores_local_coordinates(self):
        f = PiecewiseDensity.from_pieces(UNIT, [(2.25, 2.75, 4.0), (0.0, 1.0, 1.0)])
        assert f.intervals == [0, 1]
        assert list(f.part(1).edges) == [0.25, 0.75]
        assert f.pieces() == [(0, 0.0, 1.0, 1.0), (1, 2.25, 2.75, 4.0)]
        assert mass(f) == pytest.approx(3.0)

    def test_piece_across_a_gap_is_rejected(self):
        with pytest.raises(OutsideDomainError):
            PiecewiseDensity.from_pieces(UNIT, [(0.5, 2.5, 1.0)])
        with pytest.raises(OutsideDomainError):
            PiecewiseDensity.from_pieces(UNIT, [(1.2, 1.8, 1.0)])

    def test_tiny_interval_keeps_precision(self):
        g = IntervalUnion.geometric()
        k = 40
        width = g.delta(k)
        f = PiecewiseDensity(g, {k: StepFunction.constant(0.0, width, 1.0)})
        assert mass(f) == pytest.approx(width, rel=1e-15)

    def test_free_stream_translates_and_drops(self):
        f = PiecewiseDensity.indicator(UNIT, 0.0, 1.0)
        moved = free_stream(f, 0.4)
        assert mass(moved) == pytest.approx(0.6)
        assert moved.evaluate(0.2) == 0.0
        assert moved.evaluate(0.5) == 1.0
        assert free_stream(f, 0.0) is f
        assert free_stream(f, 1.5).is_zero

    @pytest.mark.parametrize("s, t", [(0.0, 0.4), (0.1, 0.3), (0.25, 0.5), (0.6, 0.7), (0.2, 1.3)])
    def test_free_stream_semigroup(self, s, t):
        f = PiecewiseDensity.from_pieces(UNIT, [(0.0, 0.25, 2.0), (0.25, 1.0, 1.0), (2.1, 2.6, 3.0)])
        twice = free_stream(free_stream(f, s), t)
        once = free_stream(f, s + t)
        assert twice.l1_distance(once) <= 1e-12
        assert mass(once) <= mass(f)

    def test_canonical_density_is_stable(self):
        f = PiecewiseDensity.from_pieces(UNIT, [(0.0, 0.5, 1.0), (0.5, 1.0, 1.0), (2.0, 2.5, 0.0)])
        again = PiecewiseDensity(UNIT, dict(f.parts))
        assert f.pieces() == [(0, 0.0, 1.0, 1.0)]
        assert again.pieces() == f.pieces()

    def test_signed_mass_uses_absolute_value(self):
        f = PiecewiseDensity.from_pieces(UNIT, [(0.0, 0.5, 1.0), (0.5, 1.0, -1.0)])
        assert mass(f) == pytest.approx(1.0)
        assert not f.is_nonnegative()
        assert f.min_value() == -1.0

    def test_restrict_and_distance(self):
        f = PiecewiseDensity.from_pieces(UNIT, [(0.0, 1.0, 1.0), (2.0, 3.0, 2.0)])
        assert mass(restrict(f, 1)) == pytest.approx(2.0)
        assert restrict(f, 5).is_zero
        assert f.l1_distance(restrict(f, 0)) == pytest.approx(2.0)


class TestEnsemble:
    def test_counter_stream_is_reproducible(self):
        a = counter_stream(7, 3).random(5)
        b = counter_stream(7, 3).random(5)
        c = counter_stream(7, 4).random(5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_sampling_is_deterministic_and_inside(self):
        e1 = sample_ensemble(DISK, 1000, seed=11)
        e2 = sample_ensemble(DISK, 1000, seed=11)
        assert np.array_equal(e1.positions, e2.positions)
        assert np.array_equal(e1.velocities, e2.velocities)
        assert np.all(DISK.domain.signed_distance(e1.positions) < 0)
        assert mass(e1) == pytest.approx(1.0)

    def test_sub_disk_region(self):
        e = sample_ensemble(DISK, 500, seed=1, mass=2.0, region=((0.2, 0.0), 0.3))
        d = np.hypot(e.positions[:, 0] - 0.2, e.positions[:, 1])
        assert d.max() <= 0.3
        assert mass(e) == pytest.approx(2.0)
        with pytest.raises(OutsideDomainError):
            sample_ensemble(DISK, 10, seed=1, region=((0.9, 0.0), 0.3))

    def test_interval_union_has_no_ensembles(self):
        with pytest.raises(UnsupportedGeometryError):
            sample_ensemble(UNIT, 10, seed=1)

    def test_transport_keeps_weights(self):
        e = sample_ensemble(DISK, 2000, seed=5)
        moved = transport_ensemble(e, 3.0, DISK)
        assert np.array_equal(moved.weights, e.weights)
        assert mass(moved) == mass(e)
        hist = moved.rebound_histogram()
        assert hist.sum() == pytest.approx(1.0)
        traces = moved.trace_norms()
        assert np.all(np.diff(traces) <= 0)
        assert traces[-1] == 0.0

    @staticmethod
    def single(x, v):
        return ParticleEnsemble(np.array([x], dtype=float), np.array([v], dtype=float), np.ones(1),
                                np.zeros(1, dtype=np.int64), np.zeros(1, dtype=bool), seed=0)

    def test_transport_across_a_diameter(self):
        moved = transport_ensemble(self.single((0.0, 0.0), (1.0, 0.0)), 2.0, DISK)
        assert moved.positions[0] == pytest.approx([0.0, 0.0], abs=1e-12)
        assert moved.velocities[0] == pytest.approx([-1.0, 0.0], abs=1e-12)
        assert moved.rebounds[0] == 1

    def test_transport_for_zero_time_is_identity(self):
        e = self.single((0.0, 0.5), (1.0, 0.0))
        assert transport_ensemble(e, 0.0, DISK) is e

    def test_transport_past_an_off_centre_rebound(self):
        h = math.sqrt(0.75)
        moved = transport_ensemble(self.single((0.0, 0.5), (1.0, 0.0)), h + 0.1, DISK)
        assert moved.positions[0] == pytest.approx([h - 0.05, 0.5 - 0.1 * h], abs=1e-12)
        assert moved.velocities[0] == pytest.approx([-0.5, -h], abs=1e-12)
        assert moved.rebounds[0] == 1
        assert mass(moved) == 1.0
