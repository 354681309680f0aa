import math

import numpy as np
import pytest

from losnet.behaviors import (
    TaskSite,
    UnicycleState,
    circle_formation_control,
    circle_slot,
    rendezvous_control,
    unicycle_map,
)


class TestRendezvous:
    def test_at_site_is_fixed_point(self):
        site = TaskSite(position=np.array([2.0, -1.0]))
        np.testing.assert_allclose(rendezvous_control([2, -1], site, 1.0, 10.0), [0, 0])

    def test_proportional_pull(self):
        site = TaskSite(position=np.array([1.0, 0.0]))
        np.testing.assert_allclose(rendezvous_control([0, 0], site, 1.0, 10.0), [1, 0])

    def test_speed_cap(self):
        site = TaskSite(position=np.array([100.0, 0.0]))
        np.testing.assert_allclose(rendezvous_control([0, 0], site, 1.0, 2.0), [2, 0])

    def test_bounded_and_continuous(self, rng):
        site = TaskSite(position=np.array([0.5, 0.5]))
        for _ in range(50):
            x = rng.uniform(-10, 10, 2)
            u = rendezvous_control(x, site, 1.3, 0.7)
            u_near = rendezvous_control(x + 1e-9, site, 1.3, 0.7)
            assert np.linalg.norm(u) <= 0.7 + 1e-12
            assert np.linalg.norm(u - u_near) < 1e-7


class TestCircleFormation:
    def test_slot_angles_quarter(self):
        site = TaskSite(position=np.zeros(2), kind="circle", radius=1.0)
        slots = [circle_slot(site, k, 4) for k in range(4)]
        np.testing.assert_allclose(slots[0], [1, 0], atol=1e-12)
        np.testing.assert_allclose(slots[1], [0, 1], atol=1e-12)
        np.testing.assert_allclose(slots[2], [-1, 0], atol=1e-12)
        np.testing.assert_allclose(slots[3], [0, -1], atol=1e-12)

    def test_robot_at_slot_is_fixed_point(self):
        site = TaskSite(position=np.zeros(2), kind="circle", radius=1.0)
        u = circle_formation_control([1, 0], 0, 4, site, 1.0, 10.0)
        np.testing.assert_allclose(u, [0, 0], atol=1e-12)

    def test_pull_towards_slot(self):
        site = TaskSite(position=np.zeros(2), kind="circle", radius=1.0)
        u = circle_formation_control([2, 0], 0, 4, site, 1.0, 10.0)
        np.testing.assert_allclose(u, [-1, 0], atol=1e-12)

    def test_radius_required(self):
        with pytest.raises(ValueError):
            TaskSite(position=np.zeros(2), kind="circle", radius=0.0)


class TestUnicycleMap:
    def test_aligned(self):
        state = UnicycleState(position=np.zeros(2), heading=0.0, lookahead=0.1)
        v, omega = unicycle_map([1.0, 0.0], state)
        assert (v, omega) == (pytest.approx(1.0), pytest.approx(0.0))

    def test_lateral_command_turns(self):
        state = UnicycleState(position=np.zeros(2), heading=0.0, lookahead=0.1)
        v, omega = unicycle_map([0.0, 1.0], state)
        assert v == pytest.approx(0.0)
        assert omega == pytest.approx(10.0)

    def test_rotated_heading(self):
        state = UnicycleState(position=np.zeros(2), heading=math.pi / 2, lookahead=0.1)
        v, omega = unicycle_map([0.0, 1.0], state)
        assert v == pytest.approx(1.0)
        assert omega == pytest.approx(0.0, abs=1e-12)

    def test_round_trip_reconstructs_command(self, rng):
        for _ in range(50):
            theta = rng.uniform(-math.pi, math.pi)
            ell = rng.uniform(0.01, 1.0)
            u = rng.uniform(-2, 2, 2)
            state = UnicycleState(position=np.zeros(2), heading=theta, lookahead=ell)
            v, omega = unicycle_map(u, state)
            c, s = math.cos(theta), math.sin(theta)
            back = np.array([c * v - s * omega * ell, s * v + c * omega * ell])
            np.testing.assert_allclose(back, u, atol=1e-12)

    def test_lookahead_validation(self):
        with pytest.raises(ValueError):
            UnicycleState(position=np.zeros(2), heading=0.0, lookahead=0.0)
