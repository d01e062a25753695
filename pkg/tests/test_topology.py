"""Geometry tests: link enumeration, cell traversal, neighbourhoods."""

import math

import numpy as np
import pytest

from rfcal.topology import (
    Region,
    build_neighbourhoods,
    build_topology,
    chi,
    link_cells,
    load_topology_json,
    perimeter_positions,
    save_topology_json,
)

# Deterministic configuration whose three marked links cross 2, 7 and 8 cells
# with overlaps 1 and 4 on a unit-cell partition of [0,8]x[0,4] (pairs
# (0,1), (2,3), (4,5)).
OVERLAP_FIXTURE = [
    (1.73, 2.44),
    (2.91, 2.09),
    (1.63, 3.85),
    (4.70, 0.57),
    (1.56, 2.29),
    (7.22, 1.51),
]


def rho_by_sampling(partition, p, q, n_samples=10**4):
    """Dense-sampling oracle: cells visited by n points along the segment."""
    t = np.linspace(0.0, 1.0, n_samples)
    xs = p[0] + t * (q[0] - p[0])
    ys = p[1] + t * (q[1] - p[1])
    r = partition.region
    cols = np.clip(
        np.floor((xs - r.xmin) / partition.cell_width).astype(int), 0, partition.n_cols - 1
    )
    rows = np.clip(
        np.floor((ys - r.ymin) / partition.cell_height).astype(int), 0, partition.n_rows - 1
    )
    return frozenset((rows * partition.n_cols + cols).tolist())


def random_topology(seed, n_nodes=5, region=Region(0, 0, 7, 7), margin=0.2):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(
        [region.xmin + margin, region.ymin + margin],
        [region.xmax - margin, region.ymax - margin],
        size=(n_nodes, 2),
    )
    return build_topology(pts, region=region)


class TestBuildTopology:
    def test_square_corners(self):
        topo = build_topology([(0, 0), (0, 1), (1, 0), (1, 1)])
        assert topo.n_links == 6
        lengths = sorted(lk.length for lk in topo.links)
        assert lengths[:4] == pytest.approx([1, 1, 1, 1])
        assert lengths[4:] == pytest.approx([math.sqrt(2)] * 2)

    def test_22_node_perimeter_link_count(self):
        topo = build_topology(perimeter_positions(22, 7.0, 7.0))
        assert topo.n_links == 22 * 21 // 2 == 231

    def test_too_few_nodes(self):
        with pytest.raises(ValueError):
            build_topology([(0, 0), (1, 1)])

    def test_duplicate_positions(self):
        with pytest.raises(ValueError):
            build_topology([(0, 0), (0, 0), (1, 1)])

    def test_node_outside_region(self):
        with pytest.raises(ValueError):
            build_topology([(0, 0), (1, 0), (9, 9)], region=Region(0, 0, 2, 2))

    def test_lexicographic_link_order(self):
        topo = build_topology([(0, 0), (0, 1), (1, 0)], node_ids=[7, 2, 5])
        assert [(lk.a, lk.b) for lk in topo.links] == [(2, 5), (2, 7), (5, 7)]

    def test_every_pair_once(self):
        topo = random_topology(3, n_nodes=8)
        pairs = {(lk.a, lk.b) for lk in topo.links}
        assert len(pairs) == topo.n_links == 28
        assert all(a < b for a, b in pairs)

    def test_lengths_are_euclidean(self):
        topo = random_topology(4, n_nodes=6)
        for lk in topo.links:
            ax, ay = topo.positions[lk.a]
            bx, by = topo.positions[lk.b]
            assert lk.length == pytest.approx(math.hypot(bx - ax, by - ay))
            assert lk.length > 0


class TestLinkCells:
    def test_horizontal_link_three_cells(self):
        topo = build_topology([(0.1, 0.5), (2.9, 0.5), (1.5, 0.2)], region=Region(0, 0, 3, 1))
        part = link_cells(topo, 1.0, 1.0)
        assert part.n_cols == 3 and part.n_rows == 1
        assert len(part.rho_of((0, 1))) == 3

    def test_overlap_fixture_counts(self):
        topo = build_topology(OVERLAP_FIXTURE, region=Region(0, 0, 8, 4))
        part = link_cells(topo, 1.0, 1.0)
        r1 = part.rho_of((0, 1))
        r2 = part.rho_of((2, 3))
        r3 = part.rho_of((4, 5))
        assert (len(r1), len(r2), len(r3)) == (2, 7, 8)
        assert len(r1 & r2) == 1
        assert len(r2 & r3) == 4

    def test_non_positive_cell_size(self):
        topo = build_topology([(0, 0), (0, 1), (1, 0)])
        with pytest.raises(ValueError):
            link_cells(topo, 0.0, 1.0)

    def test_rho_nonempty_and_order_independent(self):
        topo = random_topology(11, n_nodes=7)
        part = link_cells(topo, 1.4, 1.4)
        assert all(len(r) > 0 for r in part.rho)
        # Rebuild: traversal must not depend on any mutable state.
        part2 = link_cells(topo, 1.4, 1.4)
        assert part.rho == part2.rho

    def test_corner_graze_excluded(self):
        # Diagonal through the exact corner (1, 1): the two cells it only
        # touches at that corner must not be collected.
        topo = build_topology([(0.5, 0.5), (1.5, 1.5), (0.2, 1.8)], region=Region(0, 0, 2, 2))
        part = link_cells(topo, 1.0, 1.0)
        assert part.rho_of((0, 1)) == frozenset({0, 3})

    def test_truncated_last_column(self):
        topo = build_topology([(0.1, 0.4), (2.4, 0.4), (1.0, 0.1)], region=Region(0, 0, 2.5, 0.5))
        part = link_cells(topo, 1.0, 1.0)
        assert part.n_cols == 3
        assert part.cell_bounds(2, 0)[2] == pytest.approx(2.5)
        assert len(part.rho_of((0, 1))) == 3

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_sampling_oracle(self, seed):
        topo = random_topology(seed)
        part = link_cells(topo, 7 / 5, 7 / 5)
        for li, lk in enumerate(topo.links):
            oracle = rho_by_sampling(part, topo.positions[lk.a], topo.positions[lk.b])
            assert part.rho[li] == oracle


class TestChi:
    def test_reference_values(self):
        topo = build_topology(OVERLAP_FIXTURE, region=Region(0, 0, 8, 4))
        part = link_cells(topo, 1.0, 1.0)
        assert chi(part, (0, 1), (2, 3)) == pytest.approx(50.0)
        assert chi(part, (2, 3), (4, 5)) == pytest.approx(100.0 * 4 / 7)

    def test_identity_is_100(self):
        topo = random_topology(5)
        part = link_cells(topo, 1.4, 1.4)
        for li in range(topo.n_links):
            assert chi(part, li, li) == 100.0

    def test_symmetric_and_bounded(self):
        topo = random_topology(6, n_nodes=7)
        part = link_cells(topo, 1.4, 1.4)
        for i in range(topo.n_links):
            for j in range(i, topo.n_links):
                v = chi(part, i, j)
                assert v == chi(part, j, i)
                assert 0.0 <= v <= 100.0

    def test_unknown_link(self):
        topo = random_topology(7)
        part = link_cells(topo, 1.4, 1.4)
        with pytest.raises(KeyError):
            chi(part, (0, 99), (0, 1))


class TestNeighbourhoods:
    def test_tau_zero_equal_lengths_only(self):
        # Perimeter layout: symmetric placements give exactly repeated lengths.
        topo = build_topology(perimeter_positions(8, 4.0, 4.0))
        part = link_cells(topo, 1.0, 1.0)
        nb = build_neighbourhoods(topo, part, tau=0.0, c_percent=50.0)
        for i in range(topo.n_links):
            expect = {
                j
                for j in range(topo.n_links)
                if j != i and abs(topo.lengths[j] - topo.lengths[i]) <= 1e-9
            }
            assert set(nb.l_sets[i].tolist()) == expect
        # Symmetry dictates every link has at least one equal-length partner here.
        assert all(len(s) > 0 for s in nb.l_sets)

    def test_c_100_requires_nested_overlap(self):
        topo = random_topology(9, n_nodes=6)
        part = link_cells(topo, 1.4, 1.4)
        nb = build_neighbourhoods(topo, part, tau=1.0, c_percent=100.0)
        for i in range(topo.n_links):
            for j in nb.s_sets[i]:
                small = min(part.rho[i], part.rho[j], key=len)
                big = max(part.rho[j], part.rho[i], key=len)
                assert small <= big

    def test_brute_force_oracle(self):
        topo = random_topology(17, n_nodes=22)
        part = link_cells(topo, 1.4, 1.4)
        nb = build_neighbourhoods(topo, part, tau=0.75, c_percent=35.0)
        for i in range(topo.n_links):
            for j in range(topo.n_links):
                in_l = abs(topo.lengths[i] - topo.lengths[j]) <= 0.75 + 1e-9 and i != j
                in_s = chi(part, i, j) >= 35.0 and i != j
                assert nb.l_mat[i, j] == in_l
                assert nb.s_mat[i, j] == in_s

    @pytest.mark.parametrize("seed", range(100))
    def test_symmetry_and_self_exclusion(self, seed):
        topo = random_topology(seed, n_nodes=5)
        part = link_cells(topo, 1.4, 1.4)
        nb = build_neighbourhoods(topo, part, tau=0.5, c_percent=40.0)
        assert np.array_equal(nb.l_mat, nb.l_mat.T)
        assert np.array_equal(nb.s_mat, nb.s_mat.T)
        assert not nb.l_mat.diagonal().any()
        assert not nb.s_mat.diagonal().any()

    @pytest.mark.parametrize("factor", [0.25, 3.0, 10.0])
    def test_scale_invariance(self, factor):
        rng = np.random.default_rng(23)
        pts = rng.uniform(0.2, 6.8, size=(7, 2))
        topo = build_topology(pts, region=Region(0, 0, 7, 7))
        part = link_cells(topo, 1.4, 1.4)
        nb = build_neighbourhoods(topo, part, tau=0.75, c_percent=35.0)

        topo2 = build_topology(pts * factor, region=Region(0, 0, 7 * factor, 7 * factor))
        part2 = link_cells(topo2, 1.4 * factor, 1.4 * factor)
        nb2 = build_neighbourhoods(topo2, part2, tau=0.75 * factor, c_percent=35.0)

        assert np.array_equal(nb.l_mat, nb2.l_mat)
        assert np.array_equal(nb.s_mat, nb2.s_mat)
        for i in range(topo.n_links):
            for j in range(topo.n_links):
                assert chi(part, i, j) == pytest.approx(chi(part2, i, j))

    def test_c_out_of_range(self):
        topo = random_topology(2)
        part = link_cells(topo, 1.4, 1.4)
        with pytest.raises(ValueError):
            build_neighbourhoods(topo, part, tau=0.0, c_percent=0.0)
        with pytest.raises(ValueError):
            build_neighbourhoods(topo, part, tau=0.0, c_percent=101.0)
        with pytest.raises(ValueError):
            build_neighbourhoods(topo, part, tau=-1.0, c_percent=50.0)


class TestTopologyFile:
    def test_round_trip(self, tmp_path):
        topo = build_topology(perimeter_positions(6, 3.0, 2.0))
        path = tmp_path / "topo.json"
        save_topology_json(topo, path, {"cell_width": 0.5})
        loaded, part_params = load_topology_json(path)
        assert loaded.node_ids == topo.node_ids
        assert [(lk.a, lk.b) for lk in loaded.links] == [(lk.a, lk.b) for lk in topo.links]
        assert np.allclose(loaded.lengths, topo.lengths)
        assert part_params == {"cell_width": 0.5}
