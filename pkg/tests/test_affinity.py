import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bnf.affinity import (
    AffinityConfig,
    AffinityGraph,
    boundary_affinity,
    build_graph,
    combined_affinity,
    disk_offsets,
    line_pixels,
    load_graph,
    max_crossing,
    pair_max_crossing,
    sample_pairs,
    softmax_affinity,
)
from bnf.core import BoundaryMap, UnaryField

from oracles import brute_max_crossing, segment_mask


class TestLines:
    @pytest.mark.parametrize("q", [(0, 5), (5, 0), (3, 7), (7, 3), (-4, 6), (6, -4), (2, -2), (0, 0), (1, 2)])
    def test_matches_enumeration(self, q):
        shape = (20, 20)
        p = (8, 8)
        q = (8 + q[0], 8 + q[1])
        got = np.zeros(shape, bool)
        for r, c in line_pixels(p, q):
            got[r, c] = True
        np.testing.assert_array_equal(got, segment_mask(shape, p, q))

    def test_endpoints_and_connectivity(self, rng):
        for _ in range(200):
            p, q = tuple(rng.integers(-30, 30, 2)), tuple(rng.integers(-30, 30, 2))
            pts = line_pixels(p, q)
            assert {pts[0], pts[-1]} == {tuple(map(int, p)), tuple(map(int, q))}
            steps = np.abs(np.diff(np.array(pts), axis=0))
            assert steps.max(initial=0) <= 1
            assert len(pts) == max(abs(q[0] - p[0]), abs(q[1] - p[1])) + 1

    def test_order_independent(self, rng):
        for _ in range(200):
            p, q = tuple(rng.integers(0, 40, 2)), tuple(rng.integers(0, 40, 2))
            assert set(line_pixels(p, q)) == set(line_pixels(q, p))


class TestMaxCrossing:
    def test_zero_map_neighbours(self):
        b = BoundaryMap(np.zeros((4, 4)))
        assert max_crossing(b, (1, 1), (1, 2)) == 0.0

    def test_vertical_boundary_column(self):
        v = np.zeros((5, 5))
        v[:, 2] = 0.8
        b = BoundaryMap(v)
        assert max_crossing(b, (2, 0), (2, 4)) == 0.8
        assert max_crossing(b, (0, 0), (4, 4)) == 0.8
        assert max_crossing(b, (0, 0), (4, 1)) == 0.0

    def test_same_pixel(self):
        v = np.zeros((3, 3))
        v[1, 1] = 0.3
        assert max_crossing(BoundaryMap(v), (1, 1), (1, 1)) == 0.3

    def test_adjacent_uses_endpoints(self):
        v = np.zeros((3, 3))
        v[0, 1] = 0.6
        assert max_crossing(BoundaryMap(v), (0, 0), (0, 1)) == 0.6

    def test_interior_excludes_endpoints(self):
        v = np.zeros((1, 5))
        v[0, 0] = v[0, 4] = 1.0
        assert max_crossing(BoundaryMap(v), (0, 0), (0, 4)) == 0.0

    def test_out_of_bounds(self):
        with pytest.raises(IndexError):
            max_crossing(BoundaryMap(np.zeros((3, 3))), (0, 0), (3, 0))

    def test_symmetric_and_matches_brute_force(self, rng):
        v = rng.uniform(size=(9, 9))
        for _ in range(300):
            p, q = tuple(rng.integers(0, 9, 2)), tuple(rng.integers(0, 9, 2))
            m = max_crossing(BoundaryMap(v), p, q)
            assert m == max_crossing(BoundaryMap(v), q, p)
            assert m == brute_max_crossing(v, p, q)

    def test_vectorized_matches_scalar(self, rng):
        v = rng.uniform(size=(12, 12))
        i, j = sample_pairs((12, 12), 4, 1.0, seed=0)
        got = pair_max_crossing(v, i, j)
        for a, b, m in zip(i[::7], j[::7], got[::7]):
            assert m == max_crossing(v, divmod(int(a), 12), divmod(int(b), 12))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_monotone_in_boundary(self, seed):
        r = np.random.default_rng(seed)
        v = r.uniform(size=(8, 8))
        raised = v.copy()
        k = tuple(r.integers(0, 8, 2))
        raised[k] = min(1.0, v[k] + r.uniform(0, 0.5))
        p, q = tuple(r.integers(0, 8, 2)), tuple(r.integers(0, 8, 2))
        assert boundary_affinity(BoundaryMap(raised), p, q, 0.1) <= boundary_affinity(BoundaryMap(v), p, q, 0.1)


class TestAffinityValues:
    def _map_with_crossing(self, m):
        v = np.zeros((1, 3))
        v[0, 1] = m
        return BoundaryMap(v)

    def test_boundary_affinity_zero(self):
        assert boundary_affinity(self._map_with_crossing(0.0), (0, 0), (0, 2), 0.1) == 1.0

    def test_boundary_affinity_at_sigma(self):
        got = boundary_affinity(self._map_with_crossing(0.25), (0, 0), (0, 2), 0.25)
        assert got == pytest.approx(math.exp(-1), abs=1e-12)

    def test_boundary_affinity_strong(self):
        got = boundary_affinity(self._map_with_crossing(1.0), (0, 0), (0, 2), 0.1)
        assert got == pytest.approx(4.539992976248485e-05, rel=1e-12)

    def _unary(self):
        p = np.array([[[0.7, 0.7, 0.2, 0.6]], [[0.3, 0.3, 0.8, 0.4]]])
        return UnaryField.from_softmax(p)

    def test_softmax_different_labels(self):
        u = self._unary()
        assert softmax_affinity(u, u.argmax(), (0, 0), (0, 2), 0.1) == 0.0

    def test_softmax_identical(self):
        u = self._unary()
        assert softmax_affinity(u, u.argmax(), (0, 0), (0, 1), 0.1) == 1.0

    def test_softmax_at_sigma(self):
        u = self._unary()
        got = softmax_affinity(u, u.argmax(), (0, 0), (0, 3), 0.1)
        assert got == pytest.approx(math.exp(-1), abs=1e-12)

    @pytest.mark.parametrize("w_sm,w_sb,expected", [
        (0.0, 1.0, 1.0),
        (1.0, 1.0, math.e),
        (0.5, 0.5, 0.5 * math.exp(0.5)),
    ])
    def test_combined(self, w_sm, w_sb, expected):
        assert combined_affinity(w_sm, w_sb) == pytest.approx(expected, abs=1e-12)


class TestSampling:
    def test_disk_radius_one_is_eight_neighbourhood(self):
        offsets, _ = disk_offsets(1)
        assert sorted(map(tuple, offsets)) == [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]

    def test_disk_radius_twenty(self):
        offsets, _ = disk_offsets(20)
        d2 = (offsets ** 2).sum(axis=1)
        assert d2.max() <= 20.5 ** 2 and (0, 0) not in set(map(tuple, offsets))
        assert len(offsets) == int(sum(1 for a in range(-20, 21) for b in range(-20, 21)
                                       if 0 < a * a + b * b <= 420.25))

    def test_count_per_pixel(self):
        h, w, r, frac = 15, 17, 3, 0.3
        i, j = sample_pairs((h, w), r, frac, seed=4)
        offsets, _ = disk_offsets(r)
        # every pixel's own draw is contained in the union
        edges = set(zip(i.tolist(), j.tolist()))
        deg = np.bincount(np.concatenate([i, j]), minlength=h * w)
        for p in range(h * w):
            pr, pc = divmod(p, w)
            k = sum(1 for dr, dc in offsets if 0 <= pr + dr < h and 0 <= pc + dc < w)
            assert deg[p] >= max(1, math.floor(frac * k))
        assert all(a < b for a, b in edges)

    def test_deterministic(self):
        a = sample_pairs((10, 10), 3, 0.2, seed=9)
        b = sample_pairs((10, 10), 3, 0.2, seed=9)
        c = sample_pairs((10, 10), 3, 0.2, seed=10)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        assert not (len(a[0]) == len(c[0]) and np.array_equal(a[0], c[0]) and np.array_equal(a[1], c[1]))

    def test_chunking_does_not_change_draw(self):
        a = sample_pairs((9, 11), 4, 0.25, seed=1, chunk=7)
        b = sample_pairs((9, 11), 4, 0.25, seed=1, chunk=1000)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])


class TestBuildGraph:
    def test_full_eight_neighbourhood(self):
        g = build_graph(BoundaryMap(np.zeros((4, 4))), None, AffinityConfig(radius=1, sample_fraction=1.0))
        W = g.W.toarray()
        for p in range(16):
            for q in range(16):
                (pr, pc), (qr, qc) = divmod(p, 4), divmod(q, 4)
                adjacent = p != q and max(abs(pr - qr), abs(pc - qc)) == 1
                assert W[p, q] == (1.0 if adjacent else 0.0)
        deg = g.degrees.reshape(4, 4)
        np.testing.assert_array_equal(deg[1:3, 1:3], 8.0)
        assert deg[0, 0] == 3.0 and deg[0, 1] == 5.0

    def test_deterministic_entries(self, rng):
        b = BoundaryMap(rng.uniform(size=(10, 10)))
        cfg = AffinityConfig(radius=4, sample_fraction=0.3, seed=3)
        e1, e2 = build_graph(b, None, cfg).entries(), build_graph(b, None, cfg).entries()
        for a, c in zip(e1, e2):
            np.testing.assert_array_equal(a, c)

    def test_two_region_scene(self):
        v = np.zeros((32, 32))
        v[:, 15:17] = 1.0
        b = BoundaryMap(v)
        cfg = AffinityConfig(sigma_sb=0.1, radius=6, sample_fraction=0.5, seed=0)
        g = build_graph(b, None, cfg)
        i, j, w = g.entries()
        side = lambda p: (p % 32) >= 16
        for a, c, wt in zip(i, j, w):
            pa, pc = divmod(int(a), 32), divmod(int(c), 32)
            m = brute_max_crossing(v, pa, pc)
            assert wt == pytest.approx(math.exp(-m / 0.1), rel=1e-12)
            if side(a) != side(c):
                assert wt <= math.exp(-10) * (1 + 1e-12)
            elif v[pa] == 0 and v[pc] == 0:
                assert wt == 1.0

    def test_graph_invariants(self, rng):
        b = BoundaryMap(rng.uniform(size=(14, 13)))
        u = UnaryField.from_scores(rng.uniform(size=(3, 14, 13)))
        g = build_graph(b, u, AffinityConfig(radius=5, sample_fraction=0.2, seed=2))
        W = g.W.toarray()
        np.testing.assert_array_equal(W, W.T)
        assert np.all(np.diag(W) == 0) and np.all(W >= 0) and np.all(np.isfinite(W))
        np.testing.assert_allclose(g.degrees, W.sum(axis=1), rtol=1e-12)
        assert np.all(g.degrees > 0)
        L = g.laplacian().toarray()
        assert np.abs(L.sum(axis=1)).max() <= 1e-12 * g.degrees.max()

    def test_softmax_term_combines(self, rng):
        b = BoundaryMap(rng.uniform(0, 0.3, size=(6, 6)))
        u = UnaryField.from_scores(rng.uniform(size=(2, 6, 6)))
        cfg = AffinityConfig(radius=2, sample_fraction=1.0, sigma_sb=0.2, sigma_sm=0.3)
        g = build_graph(b, u, cfg)
        hard = u.argmax()
        i, j, w = g.entries()
        for a, c, wt in zip(i, j, w):
            pa, pc = divmod(int(a), 6), divmod(int(c), 6)
            expect = combined_affinity(softmax_affinity(u, hard, pa, pc, 0.3), boundary_affinity(b, pa, pc, 0.2))
            assert wt == pytest.approx(expect, rel=1e-12)

    def test_softmax_flag_off(self, rng):
        b = BoundaryMap(rng.uniform(size=(6, 6)))
        u = UnaryField.from_scores(rng.uniform(size=(2, 6, 6)))
        cfg = AffinityConfig(radius=2, sample_fraction=1.0, use_softmax_term=False)
        np.testing.assert_array_equal(build_graph(b, u, cfg).W.toarray(), build_graph(b, None, cfg).W.toarray())

    def test_dimension_mismatch(self, rng):
        u = UnaryField.from_scores(rng.uniform(size=(2, 5, 5)))
        with pytest.raises(ValueError):
            build_graph(BoundaryMap(np.zeros((4, 4))), u, AffinityConfig(radius=1))

    def test_default_config(self):
        cfg = AffinityConfig()
        assert cfg.radius == 20 and cfg.sample_fraction == 0.1

    def test_config_validation(self):
        for bad in (dict(sigma_sb=0), dict(sample_fraction=0.0), dict(sample_fraction=1.5), dict(radius=0)):
            with pytest.raises(ValueError):
                AffinityConfig(**bad)

    def test_dump_round_trip(self, tmp_path, rng):
        g = build_graph(BoundaryMap(rng.uniform(size=(5, 5))), None, AffinityConfig(radius=2, sample_fraction=0.5))
        g.dump(tmp_path / "g.txt")
        lines = (tmp_path / "g.txt").read_text().splitlines()
        assert lines[0] == f"25 {g.nnz}"
        keys = [tuple(map(int, ln.split()[:2])) for ln in lines[1:]]
        assert keys == sorted(keys)
        back = load_graph(tmp_path / "g.txt", shape=(5, 5))
        np.testing.assert_array_equal(back.W.toarray(), g.W.toarray())

    def test_from_edges_rejects_self_loops(self):
        with pytest.raises(ValueError):
            AffinityGraph.from_edges(3, [0, 1], [0, 2], [1.0, 1.0])


def test_isolated_pixel_gets_no_pairs():
    i, j = sample_pairs((1, 1), 3, 0.5, 0)
    assert len(i) == 0 and len(j) == 0
