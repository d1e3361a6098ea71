"""Jump point search versus plain A* on identical grids."""

import numpy as np
import pytest

from stplan.global_planner import PlannerStats, jps
from stplan.types import PlanningError

from gridutil import make_view, random_free_cell
from oracles import grid_astar_cost


def path_cost(path):
    pts = path.positions()
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def assert_dense_chain(path, view):
    trav = view.traversable()
    prev = None
    for node in path.nodes:
        assert node.index is not None
        assert trav[node.index]
        if prev is not None:
            step = np.abs(np.array(node.index) - np.array(prev))
            assert step.max() == 1
        prev = node.index


class TestSmallGrids:
    def test_empty_diagonal(self):
        view = make_view(np.zeros((5, 5, 1), dtype=bool))
        path = jps(view, (0.5, 0.5, 0.5), (4.5, 4.5, 0.5))
        assert path_cost(path) == pytest.approx(4 * np.sqrt(2.0), abs=1e-9)
        assert_dense_chain(path, view)

    def test_start_equals_goal(self):
        view = make_view(np.zeros((3, 3, 1), dtype=bool))
        path = jps(view, (1.5, 1.5, 0.5), (1.5, 1.5, 0.5))
        assert len(path) == 1

    def test_no_corner_cut(self):
        # Wall forces the path around; the diagonal squeeze is illegal.
        occ = np.zeros((3, 3, 1), dtype=bool)
        occ[1, 0, 0] = True
        occ[1, 2, 0] = True
        view = make_view(occ)
        path = jps(view, (0.5, 1.5, 0.5), (2.5, 1.5, 0.5))
        ref = grid_astar_cost(view.traversable(), (0, 1, 0), (2, 1, 0))
        assert path_cost(path) == pytest.approx(ref, abs=1e-9)
        assert_dense_chain(path, view)

    def test_sealed_wall_raises(self):
        occ = np.zeros((5, 5, 1), dtype=bool)
        occ[2, :, 0] = True
        view = make_view(occ)
        with pytest.raises(PlanningError) as err:
            jps(view, (0.5, 0.5, 0.5), (4.5, 4.5, 0.5))
        assert err.value.reason == "no-path"

    def test_occupied_endpoint_raises(self):
        occ = np.zeros((4, 4, 1), dtype=bool)
        occ[3, 3, 0] = True
        view = make_view(occ)
        with pytest.raises(PlanningError):
            jps(view, (0.5, 0.5, 0.5), (3.5, 3.5, 0.5))


class TestAgainstAstar:
    def test_planar_random_grids(self):
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            occ = rng.random((20, 20, 1)) < 0.2
            view = make_view(occ)
            trav = view.traversable()
            start = random_free_cell(rng, trav)
            goal = random_free_cell(rng, trav)
            ref = grid_astar_cost(trav, start, goal)
            try:
                path = jps(view, view.world_center(start),
                           view.world_center(goal))
            except PlanningError:
                assert ref is None
                continue
            assert ref is not None
            assert path_cost(path) == pytest.approx(ref, abs=1e-6)
            assert_dense_chain(path, view)
            hits += 1
        assert hits > 50

    def test_volume_random_grids(self):
        for seed in range(30):
            rng = np.random.default_rng(1000 + seed)
            occ = rng.random((12, 12, 6)) < 0.15
            view = make_view(occ)
            trav = view.traversable()
            start = random_free_cell(rng, trav)
            goal = random_free_cell(rng, trav)
            ref = grid_astar_cost(trav, start, goal)
            try:
                path = jps(view, view.world_center(start),
                           view.world_center(goal))
            except PlanningError:
                assert ref is None
                continue
            assert ref is not None
            assert path_cost(path) == pytest.approx(ref, abs=1e-6)

    def test_open_volumes_match_astar(self):
        # Large mostly-empty volumes drive the diagonal probe graph into
        # its cyclic regime; costs must still match A* exactly.
        for seed in range(12):
            rng = np.random.default_rng(5000 + seed)
            shape = (int(rng.integers(14, 30)), int(rng.integers(8, 18)),
                     int(rng.integers(4, 10)))
            dens = float(rng.choice([0.0, 0.02, 0.05]))
            occ = rng.random(shape) < dens
            view = make_view(occ)
            trav = view.traversable()
            start = random_free_cell(rng, trav)
            goal = random_free_cell(rng, trav)
            ref = grid_astar_cost(trav, start, goal)
            try:
                path = jps(view, view.world_center(start),
                           view.world_center(goal))
            except PlanningError:
                assert ref is None
                continue
            assert ref is not None
            assert path_cost(path) == pytest.approx(ref, abs=1e-6)

    def test_inflated_grid(self):
        rng = np.random.default_rng(77)
        occ = rng.random((15, 15, 4)) < 0.08
        view = make_view(occ, resolution=0.5, agent_radius=0.4)
        trav = view.traversable()
        start = random_free_cell(rng, trav)
        goal = random_free_cell(rng, trav)
        ref = grid_astar_cost(trav, start, goal)
        if ref is None:
            return
        path = jps(view, view.world_center(start), view.world_center(goal))
        assert path_cost(path) == pytest.approx(ref * 0.5, abs=1e-6)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        occ = rng.random((20, 20, 1)) < 0.25
        view = make_view(occ)
        trav = view.traversable()
        start = random_free_cell(rng, trav)
        goal = random_free_cell(rng, trav)
        first = jps(view, view.world_center(start), view.world_center(goal))
        second = jps(view, view.world_center(start), view.world_center(goal))
        assert [n.index for n in first.nodes] == [n.index for n in second.nodes]

    def test_stats_populated(self):
        view = make_view(np.zeros((8, 8, 2), dtype=bool))
        stats = PlannerStats()
        jps(view, (0.5, 0.5, 0.5), (7.5, 7.5, 1.5), stats=stats)
        assert stats.expansions >= 1
        assert stats.jumps >= 1
        assert stats.elapsed > 0.0
