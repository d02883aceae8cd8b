import math

import numpy as np
import pytest

from errors import BoundaryPointError, OutsideDomainError, StayTimeError, UnsupportedGeometryError
from geometry import (
    ConvexBilliard,
    ConvexPolygon,
    Disk,
    IntervalUnion,
    LinePoint,
    PlanePoint,
    VelocitySpec,
    advect,
    billiard_flow,
    boundary_foot,
    rebound_sequence,
    stay_times,
)

UNIT = IntervalUnion.uniform()
GEOMETRIC = IntervalUnion.geometric()
DISK = ConvexBilliard(Disk((0.0, 0.0), 1.0))
SQUARE = ConvexBilliard(ConvexPolygon(((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))))


class TestIntervalUnion:
    def test_locate_uses_local_coordinate(self):
        assert UNIT.locate(2.5) == (1, pytest.approx(0.5))
        k, u = GEOMETRIC.locate(9.0625)
        assert k == 3
        assert u == pytest.approx(0.0625)

    @pytest.mark.parametrize("x, error", [
        (2.0, BoundaryPointError),
        (3.0, BoundaryPointError),
        (1.5, OutsideDomainError),
        (-0.5, OutsideDomainError),
    ])
    def test_locate_rejects_boundary_and_gaps(self, x, error):
        with pytest.raises(error):
            UNIT.locate(x)

    def test_generated_widths_and_tails(self):
        assert GEOMETRIC.delta(3) == 0.125
        assert GEOMETRIC.right(1) == 3.5
        assert GEOMETRIC.transit_tail(0) == pytest.approx(1.0)
        assert GEOMETRIC.transit_tail(2) == pytest.approx(0.25)
        assert math.isinf(UNIT.transit_tail(5))

    def test_reach(self):
        assert UNIT.reach(0, 3.0) == 3
        assert UNIT.reach(4, 2.5) == 3
        # 0.5 + 0.25 + 0.125 < 0.9 <= 0.9375
        assert GEOMETRIC.reach(0, 0.9) == 4
        assert GEOMETRIC.reach(0, 1.5) is None
        assert UNIT.reach(0, 0.0) == 0

    def test_explicit_list(self):
        g = IntervalUnion(intervals=((0.0, 1.0), (2.0, 2.5), (3.0, 3.25)))
        assert g.count == 3
        assert g.transit_tail(0) == pytest.approx(0.75)
        assert g.reach(0, 10.0) == 2
        assert not g.has(3)
        with pytest.raises(ValueError):
            IntervalUnion(intervals=((0.0, 1.0), (0.5, 2.0)))

    def test_rule_needs_gap_between_intervals(self):
        with pytest.raises(ValueError):
            IntervalUnion.uniform(spacing=1.0, width=1.0)


class TestFlow1D:
    def test_stay_times(self):
        assert stay_times(LinePoint(2.25), UNIT) == (pytest.approx(0.25), pytest.approx(0.75))

    def test_advect_inside_window(self):
        assert advect(LinePoint(2.25), 0.5, UNIT).x == pytest.approx(2.75)
        assert advect(LinePoint(2.25), -0.2, UNIT).x == pytest.approx(2.05)

    def test_advect_past_exit_names_bound(self):
        with pytest.raises(StayTimeError) as info:
            advect(LinePoint(2.25), 0.75, UNIT)
        assert info.value.violated == 'tau_plus'
        with pytest.raises(StayTimeError) as info:
            advect(LinePoint(2.25), -0.3, UNIT)
        assert info.value.violated == 'tau_minus'

    def test_boundary_foot(self):
        foot, tau = boundary_foot(LinePoint(3.0), UNIT)
        assert foot.x == 2.0
        assert tau == 1.0
        with pytest.raises(OutsideDomainError):
            boundary_foot(LinePoint(2.5), UNIT)


class TestBilliard:
    def test_disk_stay_times(self):
        assert stay_times(PlanePoint((0.0, 0.0), (1.0, 0.0)), DISK) == (pytest.approx(1.0), pytest.approx(1.0))
        back, forward = stay_times(PlanePoint((0.5, 0.0), (2.0, 0.0)), DISK)
        assert back == pytest.approx(0.75)
        assert forward == pytest.approx(0.25)

    def test_disk_boundary_foot(self):
        foot, tau = boundary_foot(PlanePoint((1.0, 0.0), (1.0, 0.0)), DISK)
        assert foot.x == (pytest.approx(-1.0), pytest.approx(0.0))
        assert tau == pytest.approx(2.0)

    def test_inward_velocity_is_not_outgoing(self):
        with pytest.raises(OutsideDomainError):
            boundary_foot(PlanePoint((1.0, 0.0), (-1.0, 0.0)), DISK)

    def test_classify_and_errors(self):
        assert DISK.classify((0.2, 0.3)) == 'interior'
        assert DISK.classify((0.0, 1.0)) == 'boundary'
        assert DISK.classify((2.0, 0.0)) == 'outside'
        with pytest.raises(BoundaryPointError):
            stay_times(PlanePoint((0.0, 1.0), (1.0, 0.0)), DISK)
        with pytest.raises(OutsideDomainError):
            stay_times(PlanePoint((3.0, 0.0), (1.0, 0.0)), DISK)

    def test_rebound_sequence_along_a_diameter(self):
        seq = rebound_sequence(PlanePoint((0.0, 0.0), (1.0, 0.0)), 5.0, DISK)
        assert seq.times == pytest.approx([1.0, 3.0, 5.0])
        _, x, v = seq.events[0]
        assert x == pytest.approx([1.0, 0.0])
        assert v == pytest.approx([-1.0, 0.0])
        assert not seq.degenerate

    def test_square_stay_times(self):
        back, forward = stay_times(PlanePoint((0.25, 0.5), (1.0, 0.0)), SQUARE)
        assert back == pytest.approx(0.25)
        assert forward == pytest.approx(0.75)

    def test_polygon_must_be_counter_clockwise(self):
        with pytest.raises(ValueError):
            ConvexPolygon(((0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)))

    def test_vertex_hit_freezes_particle(self):
        x, v, rebounds, degenerate = billiard_flow(
            np.array([[0.5, 0.5]]), np.array([[1.0, 1.0]]), 1.0, SQUARE, np.zeros(1, dtype=np.int64),
            np.zeros(1, dtype=bool))
        assert degenerate[0]
        assert rebounds[0] == 0
        assert x[0] == pytest.approx([1.0, 1.0])

    def test_rebound_sequence_rejects_interval_union(self):
        with pytest.raises(UnsupportedGeometryError):
            rebound_sequence(LinePoint(0.5), 1.0, UNIT)

    @pytest.mark.parametrize("billiard", [DISK, SQUARE], ids=['disk', 'square'])
    def test_flow_keeps_particles_inside_and_speeds_fixed(self, billiard):
        rng = np.random.default_rng(3)
        x = billiard.domain.sample(500, rng)
        v = VelocitySpec('annulus', min_speed=0.5, max_speed=2.0).sample(500, rng)
        x_t, v_t, rebounds, degenerate = billiard_flow(x, v, 7.3, billiard, np.zeros(500, dtype=np.int64),
                                                       np.zeros(500, dtype=bool))
        assert np.all(billiard.domain.signed_distance(x_t) <= 1e-9)
        assert np.abs(np.hypot(*v_t.T) - np.hypot(*v.T)).max() <= 1e-12
        assert rebounds.min() >= 1

    def test_chord_skipping_matches_stepwise_rebounds(self):
        start = PlanePoint((0.3, -0.2), (0.6, 0.8))
        seq = rebound_sequence(start, 40.0, DISK)
        x, v, rebounds, _ = billiard_flow(np.array([start.x]), np.array([start.v]), 40.0, DISK,
                                          np.zeros(1, dtype=np.int64), np.zeros(1, dtype=bool))
        assert rebounds[0] == len(seq)
        _, x_last, v_last = seq.events[-1]
        t_last = seq.times[-1]
        assert x[0] == pytest.approx(x_last + (40.0 - t_last) * v_last, abs=1e-9)
        assert v[0] == pytest.approx(v_last, abs=1e-9)

    def test_rebound_sequence_off_centre(self):
        h = math.sqrt(0.75)
        seq = rebound_sequence(PlanePoint((0.0, 0.5), (1.0, 0.0)), 1.0, DISK)
        assert seq.times == pytest.approx([h], abs=1e-12)
        _, x, v = seq.events[0]
        assert x == pytest.approx([h, 0.5], abs=1e-12)
        assert v == pytest.approx([-0.5, -h], abs=1e-12)
        assert abs(np.hypot(*v) - 1.0) <= 1e-12


POINTS = [
    (UNIT, LinePoint(2.1)),
    (GEOMETRIC, LinePoint(3.1)),
    (DISK, PlanePoint((0.3, -0.2), (0.6, 0.8))),
    (SQUARE, PlanePoint((0.25, 0.4), (0.5, 0.25))),
]
POINT_IDS = ['unit', 'geometric', 'disk', 'square']


def _coords(p):
    return np.atleast_1d(np.asarray(p.x, dtype=float))


class TestFlowProperties:
    @pytest.mark.parametrize("g, p", POINTS, ids=POINT_IDS)
    @pytest.mark.parametrize("s, t", [(0.02, 0.03), (0.05, -0.04), (-0.03, 0.06)])
    def test_group_law(self, g, p, s, t):
        stepped = advect(advect(p, s, g), t, g)
        direct = advect(p, s + t, g)
        assert _coords(stepped) == pytest.approx(_coords(direct), abs=1e-12)

    @pytest.mark.parametrize("g, p", POINTS, ids=POINT_IDS)
    @pytest.mark.parametrize("t", [0.01, 0.04])
    def test_stay_times_follow_the_flow(self, g, p, t):
        tau_minus, tau_plus = stay_times(p, g)
        later_minus, later_plus = stay_times(advect(p, t, g), g)
        assert later_minus == pytest.approx(tau_minus + t, abs=1e-12)
        assert later_plus == pytest.approx(tau_plus - t, abs=1e-12)
