"""Regenerate the bundled scenario JSON files.

Run from the repo root:  python3 scripts/make_scenarios.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from losnet import BarrierParams, Polygon, TaskSite
from losnet.sim import Scenario, scenario_to_dict, validate_scenario

OUT = Path(__file__).resolve().parent.parent / "src" / "losnet" / "scenarios"


def grid(center, cols, rows, spacing):
    """Column-major grid so contiguous index blocks are spatially contiguous."""
    cx, cy = center
    pts = [
        (
            cx + (c - (cols - 1) / 2.0) * spacing,
            cy + (r - (rows - 1) / 2.0) * spacing,
        )
        for c in range(cols)
        for r in range(rows)
    ]
    return np.array(pts)


def two_rooms(n_robots: int, cols: int, rows: int, steps: int) -> Scenario:
    """Four subgroups starting above a long dividing wall with a passage at the
    top; two subgroups are tasked on each side, so straight sight lines to the
    far side are blocked and connectivity has to route through the passage."""
    params = BarrierParams(
        r_safety=0.04, r_obstacle=0.08, r_comm=0.6, u_max=0.3, gamma=1.0, delta=0.02
    )
    obstacles = (
        Polygon(np.array([[1.45, 0.0], [1.55, 0.0], [1.55, 1.25], [1.45, 1.25]])),
        Polygon(np.array([[0.55, 0.75], [0.75, 0.75], [0.75, 0.95], [0.55, 0.95]])),
        Polygon(np.array([[2.25, 0.75], [2.45, 0.75], [2.45, 0.95], [2.25, 0.95]])),
    )
    sites = {
        1: TaskSite(position=np.array([0.35, 0.35]), kind="rendezvous"),
        2: TaskSite(position=np.array([0.35, 1.62]), kind="circle", radius=0.22),
        3: TaskSite(position=np.array([2.65, 1.62]), kind="circle", radius=0.22),
        4: TaskSite(position=np.array([2.65, 0.38]), kind="circle", radius=0.22),
    }
    positions = grid((1.5, 1.70), cols, rows, 0.1)[:n_robots]
    per = n_robots // 4
    subgroups = np.repeat([1, 2, 3, 4], per)
    # Boundary samples dense enough that a sight line cannot pass between two
    # samples while its ellipsoid still clears both (slip-through guard).
    return Scenario(
        positions=positions,
        subgroups=subgroups,
        obstacles=obstacles,
        sites=sites,
        params=params,
        dt=0.02,
        steps=steps,
        method="mlccst",
        seed=7,
        spacing=0.015,
    )


def corner_pull() -> Scenario:
    """Two robots in different subgroups pulled apart around a square's corner:
    the maintained edge must pivot without its sight line clipping the block."""
    params = BarrierParams(
        r_safety=0.04, r_obstacle=0.08, r_comm=0.8, u_max=0.2, gamma=2.0, delta=0.02
    )
    obstacles = (
        Polygon(np.array([[0.9, 0.9], [1.5, 0.9], [1.5, 1.5], [0.9, 1.5]])),
    )
    sites = {
        1: TaskSite(position=np.array([0.55, 1.8]), kind="rendezvous"),
        2: TaskSite(position=np.array([1.8, 0.55]), kind="rendezvous"),
    }
    return Scenario(
        positions=np.array([[0.55, 0.85], [0.85, 0.55]]),
        subgroups=np.array([1, 2]),
        obstacles=obstacles,
        sites=sites,
        params=params,
        dt=0.02,
        steps=2000,
        method="mlccst",
        seed=3,
        spacing=0.015,
    )


def open_rendezvous() -> Scenario:
    """Small obstacle-free sanity scenario: one rendezvous subgroup, one circle
    subgroup, sites farther apart than the communication range."""
    params = BarrierParams(
        r_safety=0.04, r_obstacle=0.06, r_comm=0.6, u_max=0.3, gamma=1.0, delta=0.02
    )
    sites = {
        1: TaskSite(position=np.array([-0.6, 0.5]), kind="rendezvous"),
        2: TaskSite(position=np.array([0.6, 0.5]), kind="circle", radius=0.2),
    }
    positions = grid((0.0, 0.0), 4, 2, 0.15)
    subgroups = np.repeat([1, 2], 4)
    return Scenario(
        positions=positions,
        subgroups=subgroups,
        obstacles=(),
        sites=sites,
        params=params,
        dt=0.02,
        steps=200,
        method="mlccst",
        seed=1,
    )


def main() -> int:
    OUT.mkdir(parents=True, exist_ok=True)
    scenarios = {
        "two_rooms_40": two_rooms(40, 10, 4, 1500),
        "two_rooms_64": two_rooms(64, 8, 8, 150),
        "corner_pull_2": corner_pull(),
        "open_rendezvous_8": open_rendezvous(),
    }
    status = 0
    for name, scenario in scenarios.items():
        issues = validate_scenario(scenario)
        if issues:
            print(f"{name}: INVALID")
            for i in issues:
                print(f"  - {i}")
            status = 1
            continue
        path = OUT / f"{name}.json"
        path.write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")
        print(f"{name}: wrote {path} ({scenario.n_robots} robots, F={scenario.field.n_points})")
    return status


if __name__ == "__main__":
    sys.exit(main())
