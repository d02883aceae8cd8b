import math

import pytest

from boundary_operators import (
    BoundaryOperatorSpec,
    BoundaryVector,
    G_lambda,
    M_lambda,
    Side,
    apply_H,
    resolvent_eval,
)
from densities import PiecewiseDensity
from errors import UnsupportedGeometryError
from geometry import IntervalUnion

UNIT = IntervalUnion.uniform()
GEOMETRIC = IntervalUnion.geometric()
SHIFT = BoundaryOperatorSpec('shift')


def outgoing(entries):
    return BoundaryVector(entries, Side.OUTGOING)


class TestSpec:
    @pytest.mark.parametrize("r", [0.0, -0.5, 1.5])
    def test_scale_outside_unit_interval(self, r):
        with pytest.raises(ValueError):
            BoundaryOperatorSpec('shift', r=r)

    def test_kernel_rows_are_substochastic_with_unit_norm(self):
        with pytest.raises(ValueError):
            BoundaryOperatorSpec('kernel', rows=((0, ((1, 0.7), (2, 0.7))),))
        with pytest.raises(ValueError):
            BoundaryOperatorSpec('kernel', rows=((0, ((1, 0.5),)),))
        with pytest.raises(ValueError):
            BoundaryOperatorSpec('kernel', rows=((0, ((1, 1.5), (2, -0.5))),))
        spec = BoundaryOperatorSpec('kernel', rows=((0, ((1, 0.25), (2, 0.75))), (1, ((0, 0.5),))))
        assert spec.targets(0) == [(1, 0.25), (2, 0.75)]
        assert spec.targets(5) == []

    def test_scaled_composes(self):
        spec = SHIFT.scaled(0.5).scaled(0.5)
        assert spec.r == 0.25

    def test_specular_has_no_discrete_targets(self):
        with pytest.raises(UnsupportedGeometryError):
            BoundaryOperatorSpec('specular').targets(0)


class TestApplyH:
    def test_shift_moves_mass_to_next_interval(self):
        pushed = apply_H(SHIFT, outgoing({0: 2.0, 3: 1.0}), UNIT)
        assert pushed.side == Side.INCOMING
        assert dict(pushed.entries) == {1: 2.0, 4: 1.0}
        assert pushed.norm == pytest.approx(3.0)

    def test_scaled_shift(self):
        assert apply_H(SHIFT.scaled(0.5), outgoing({0: 2.0}), UNIT).get(1) == 1.0

    def test_last_interval_of_a_finite_list_loses_its_mass(self):
        g = IntervalUnion(intervals=((0.0, 1.0), (2.0, 3.0)))
        assert apply_H(SHIFT, outgoing({1: 1.0}), g).norm == 0.0
        assert apply_H(SHIFT, outgoing({0: 1.0}), g).get(1) == 1.0

    def test_rejects_incoming_input(self):
        with pytest.raises(ValueError):
            apply_H(SHIFT, BoundaryVector({0: 1.0}, Side.INCOMING), UNIT)

    def test_vector_algebra(self):
        a = outgoing({0: 1.0, 1: -2.0})
        b = outgoing({1: 2.0})
        assert dict((a + b).entries) == {0: 1.0}
        assert (a - b).norm == pytest.approx(5.0)
        assert not a.is_nonnegative()
        with pytest.raises(ValueError):
            a + BoundaryVector({0: 1.0}, Side.INCOMING)


class TestLambdaOperators:
    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
    def test_G_lambda_of_indicator(self, lam):
        f = PiecewiseDensity.indicator(UNIT, 0.0, 1.0)
        assert G_lambda(f, lam, UNIT).get(0) == pytest.approx(-math.expm1(-lam) / lam, rel=1e-14)

    def test_G_lambda_weights_by_distance_to_exit(self):
        f = PiecewiseDensity.indicator(UNIT, 0.5, 1.0)
        # f(b_0 - s) = 1 for s in (0, 0.5)
        assert G_lambda(f, 1.0, UNIT).get(0) == pytest.approx(1.0 - math.exp(-0.5))

    def test_M_lambda_uses_interval_length(self):
        u = BoundaryVector({1: 1.0, 2: 2.0}, Side.INCOMING)
        m = M_lambda(u, 1.0, GEOMETRIC)
        assert m.side == Side.OUTGOING
        assert m.get(1) == pytest.approx(math.exp(-0.5))
        assert m.get(2) == pytest.approx(2.0 * math.exp(-0.25))

    def test_lambda_must_be_positive(self):
        f = PiecewiseDensity.indicator(UNIT, 0.0, 1.0)
        with pytest.raises(ValueError):
            G_lambda(f, 0.0, UNIT)


class TestResolventEval:
    def test_free_part_inside_support(self):
        f = PiecewiseDensity.indicator(UNIT, 0.0, 1.0)
        value = resolvent_eval(f, 1.0, 0.5, 50, UNIT, SHIFT)
        assert value.value == pytest.approx(1.0 - math.exp(-0.5), abs=1e-12)
        assert value.boundary_part == 0.0

    def test_boundary_part_one_interval_later(self):
        f = PiecewiseDensity.indicator(UNIT, 0.0, 1.0)
        value = resolvent_eval(f, 1.0, 2.5, 50, UNIT, SHIFT)
        assert value.free_part == 0.0
        assert value.value == pytest.approx((1.0 - math.exp(-1.0)) * math.exp(-0.5), abs=1e-12)
        assert value.truncation_bound < 1e-20

    def test_two_intervals_later_on_the_geometric_ladder(self):
        f = PiecewiseDensity.indicator(GEOMETRIC, 0.0, 1.0)
        value = resolvent_eval(f, 1.0, 6.125, 50, GEOMETRIC, SHIFT)
        expected = (1.0 - math.exp(-1.0)) * math.exp(-0.5) * math.exp(-0.125)
        assert value.value == pytest.approx(expected, abs=1e-12)

    def test_billiard_boundary_is_rejected(self):
        f = PiecewiseDensity.indicator(UNIT, 0.0, 1.0)
        with pytest.raises(UnsupportedGeometryError):
            resolvent_eval(f, 1.0, 0.5, 5, UNIT, BoundaryOperatorSpec('specular'))
