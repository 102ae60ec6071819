"""Boundary- and softmax-based pixel affinities and the sparse graph W.

Two pixels are similar when no strong boundary lies on the straight segment
joining them. The boundary term is ``exp(-M_ij / sigma_sb)`` where ``M_ij``
is the largest boundary value on the rasterized segment; the optional
softmax term compares the probability of the shared hard label, and the two
combine as ``exp(w_sm) * w_sb``.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .core import BoundaryMap

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class AffinityConfig:
    sigma_sb: float = 0.1
    sigma_sm: float = 0.1
    radius: int = 20
    sample_fraction: float = 0.1
    seed: int = 0
    use_softmax_term: bool = True

    def __post_init__(self):
        if self.sigma_sb <= 0 or self.sigma_sm <= 0:
            raise ValueError("sigma_sb and sigma_sm must be positive")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ValueError(f"sample_fraction must lie in (0, 1], got {self.sample_fraction}")
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")


@dataclass(frozen=True, eq=False)
class AffinityGraph:
    """Symmetric sparse affinity matrix over the pixels of an ``h x w`` image."""

    W: sparse.csr_matrix
    degrees: np.ndarray
    shape: tuple

    @classmethod
    def from_matrix(cls, W, shape=None):
        W = sparse.csr_matrix(W, dtype=np.float64)
        W.setdiag(0.0)
        W.eliminate_zeros()
        W.sort_indices()
        n = W.shape[0]
        if shape is None:
            shape = (1, n)
        if shape[0] * shape[1] != n:
            raise ValueError(f"image shape {shape} does not match {n} nodes")
        deg = np.asarray(W.sum(axis=1)).ravel()
        deg.setflags(write=False)
        return cls(W, deg, tuple(shape))

    @classmethod
    def from_edges(cls, n, i, j, w, shape=None):
        """Build from undirected edges listed once each (``i != j``)."""
        i, j, w = np.asarray(i), np.asarray(j), np.asarray(w, dtype=np.float64)
        if np.any(i == j):
            raise ValueError("self-edges are not allowed")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("edge weights must be finite and nonnegative")
        W = sparse.coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                              shape=(n, n))
        return cls.from_matrix(W.tocsr(), shape)

    @property
    def n(self):
        return self.W.shape[0]

    @property
    def nnz(self):
        return self.W.nnz

    def entries(self):
        """Directed ``(i, j, w)`` arrays sorted by ``(i, j)``; both directions present."""
        coo = self.W.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order]

    def laplacian(self):
        return sparse.diags(self.degrees) - self.W

    def dump(self, path):
        """Debug text format: header ``n m`` then one ``i j w`` line per directed entry."""
        i, j, w = self.entries()
        with open(path, "w") as fh:
            fh.write(f"{self.n} {len(w)}\n")
            for a, b, v in zip(i.tolist(), j.tolist(), w.tolist()):
                fh.write(f"{a} {b} {v!r}\n")

    def stats(self):
        d = self.degrees
        return {
            "n": int(self.n),
            "edges": int(self.nnz // 2),
            "degree_min": float(d.min()) if d.size else 0.0,
            "degree_mean": float(d.mean()) if d.size else 0.0,
            "degree_max": float(d.max()) if d.size else 0.0,
            "weight_min": float(self.W.data.min()) if self.nnz else 0.0,
            "weight_max": float(self.W.data.max()) if self.nnz else 0.0,
        }


def load_graph(path, shape=None):
    with open(path) as fh:
        n, m = (int(v) for v in fh.readline().split())
        rows = np.loadtxt(fh, ndmin=2) if m else np.zeros((0, 3))
    if len(rows) != m:
        raise ValueError(f"graph file declares {m} entries, found {len(rows)}")
    W = sparse.csr_matrix((rows[:, 2], (rows[:, 0].astype(int), rows[:, 1].astype(int))), shape=(n, n))
    return AffinityGraph.from_matrix(W, shape)


# --- line rasterization ----------------------------------------------------


def line_pixels(p0, p1):
    """Integer Bresenham raster of the segment ``p0 -> p1`` (``(row, col)`` pairs).

    The walk always starts from the lexicographically smaller endpoint, so the
    pixel set is the same for both orderings of the endpoints.
    """
    (r0, c0), (r1, c1) = sorted([tuple(map(int, p0)), tuple(map(int, p1))])
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    pts = []
    if dc >= dr:
        err = 2 * dr - dc
        r = r0
        for c in range(c0, c1 + sc, sc):
            pts.append((r, c))
            if err > 0:
                r += sr
                err -= 2 * dc
            err += 2 * dr
    else:
        err = 2 * dc - dr
        c = c0
        for r in range(r0, r1 + sr, sr):
            pts.append((r, c))
            if err > 0:
                c += sc
                err -= 2 * dr
            err += 2 * dc
    return pts


def crossing_pixels(p0, p1):
    """Pixels whose boundary values count towards ``M_ij``.

    The interior of the raster when it has one, otherwise the endpoints.
    """
    pts = line_pixels(p0, p1)
    return pts[1:-1] if len(pts) > 2 else pts


def _check_inside(shape, p):
    r, c = p
    if not (0 <= r < shape[0] and 0 <= c < shape[1]):
        raise IndexError(f"pixel {p} lies outside a {shape[0]}x{shape[1]} image")


def max_crossing(b, i, j):
    """Largest boundary value met on the straight path between pixels ``i`` and ``j``."""
    v = b.values if isinstance(b, BoundaryMap) else np.asarray(b)
    _check_inside(v.shape, i)
    _check_inside(v.shape, j)
    return float(max(v[r, c] for r, c in crossing_pixels(i, j)))


def boundary_affinity(b, i, j, sigma_sb):
    if sigma_sb <= 0:
        raise ValueError("sigma_sb must be positive")
    return float(np.exp(-max_crossing(b, i, j) / sigma_sb))


def softmax_affinity(u, hard, i, j, sigma_sm):
    """Zero across different hard labels, else ``exp(-D_ij / sigma_sm)``.

    ``D_ij`` is the absolute difference between the two pixels' probabilities
    for their common hard label.
    """
    lab = hard.labels if hasattr(hard, "labels") else np.asarray(hard)
    ki, kj = lab[tuple(i)], lab[tuple(j)]
    if ki != kj:
        return 0.0
    p = u.probs
    d = abs(p[ki][tuple(i)] - p[kj][tuple(j)])
    return float(np.exp(-d / sigma_sm))


def combined_affinity(w_sm, w_sb):
    return float(np.exp(w_sm) * w_sb)


# --- graph construction ----------------------------------------------------


@lru_cache(maxsize=16)
def disk_offsets(radius):
    """Offsets within the discrete disk of ``radius`` (pixel centres at distance < radius + 1/2).

    Excludes ``(0, 0)``. Returns ``(offsets, paths)`` where ``paths[k]`` lists
    the crossing pixels of offset ``k``, padded by repeating the first one.
    """
    rng = np.arange(-radius, radius + 1)
    dr, dc = np.meshgrid(rng, rng, indexing="ij")
    inside = (dr**2 + dc**2 <= (radius + 0.5) ** 2) & ~((dr == 0) & (dc == 0))
    offsets = np.stack([dr[inside], dc[inside]], axis=1)
    cells = [crossing_pixels((0, 0), tuple(o)) for o in offsets]
    longest = max(len(c) for c in cells)
    paths = np.empty((len(offsets), longest, 2), dtype=np.int64)
    for k, c in enumerate(cells):
        c = np.asarray(c)
        paths[k, : len(c)] = c
        paths[k, len(c):] = c[0]
    for a in (offsets, paths):
        a.setflags(write=False)
    return offsets, paths


def _splitmix64(x):
    with np.errstate(over="ignore"):
        x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
        x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
        x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
        return x ^ (x >> np.uint64(31))


def _pair_keys(seed, pix, m):
    """Pseudo-random sort keys for (pixel, offset), a pure function of seed, pixel and offset."""
    s = _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    with np.errstate(over="ignore"):
        base = _splitmix64(s ^ pix.astype(np.uint64))
        return _splitmix64(base[:, None] * np.uint64(0x100000001B3) + np.arange(m, dtype=np.uint64)[None, :])


def sample_pairs(shape, radius, fraction, seed, chunk=2048):
    """Sampled undirected pixel pairs ``(i, j)`` with ``i < j`` (flat indices).

    Each pixel draws ``max(1, floor(fraction * k))`` distinct neighbours from
    the ``k`` in-image pixels of its disk; the draw depends only on
    ``(seed, pixel)``. Pairs drawn from either end are kept once.
    """
    h, w = shape
    offsets, _ = disk_offsets(radius)
    m = len(offsets)
    lo, hi = [], []
    for start in range(0, h * w, chunk):
        pix = np.arange(start, min(start + chunk, h * w))
        r, c = np.divmod(pix, w)
        nr = r[:, None] + offsets[None, :, 0]
        nc = c[:, None] + offsets[None, :, 1]
        valid = (nr >= 0) & (nr < h) & (nc >= 0) & (nc < w)
        avail = valid.sum(axis=1)
        count = np.minimum(avail, np.maximum(1, np.floor(fraction * avail + 1e-9).astype(int)))
        keys = _pair_keys(seed, pix, m)
        keys[~valid] = _MASK64
        order = np.argsort(keys, axis=1, kind="stable")
        take = np.arange(m)[None, :] < count[:, None]
        rows = np.broadcast_to(np.arange(len(pix))[:, None], order.shape)[take]
        cols = order[take]
        j = nr[rows, cols] * w + nc[rows, cols]
        i = pix[rows]
        lo.append(np.minimum(i, j))
        hi.append(np.maximum(i, j))
    lo, hi = np.concatenate(lo), np.concatenate(hi)
    key = np.unique(lo * (h * w) + hi)
    return key // (h * w), key % (h * w)


def pair_max_crossing(values, i, j, chunk=65536):
    """Vectorized :func:`max_crossing` for flat index arrays with ``i < j`` inside a disk."""
    h, w = values.shape
    ri, ci = np.divmod(i, w)
    rj, cj = np.divmod(j, w)
    dr, dc = rj - ri, cj - ci
    radius = int(np.ceil(np.sqrt((dr.astype(float) ** 2 + dc**2).max()))) if len(i) else 1
    offsets, paths = disk_offsets(max(radius, 1))
    span = 2 * radius + 1
    lookup = np.full(span * span, -1, dtype=np.int64)
    lookup[(offsets[:, 0] + radius) * span + offsets[:, 1] + radius] = np.arange(len(offsets))
    k = lookup[(dr + radius) * span + dc + radius]
    if np.any(k < 0):
        raise ValueError("pair outside the sampling disk")
    out = np.empty(len(i))
    for s in range(0, len(i), chunk):
        sl = slice(s, s + chunk)
        p = paths[k[sl]]
        rr = ri[sl, None] + p[:, :, 0]
        cc = ci[sl, None] + p[:, :, 1]
        out[sl] = values[rr, cc].max(axis=1)
    return out


def build_graph(b, u=None, cfg=AffinityConfig()):
    """Sample neighbour pairs and store their affinities in a sparse symmetric W."""
    h, w = b.shape
    if u is not None and (u.height, u.width) != (h, w):
        raise ValueError(f"unary field is {u.height}x{u.width}, boundary map is {h}x{w}")
    i, j = sample_pairs((h, w), cfg.radius, cfg.sample_fraction, cfg.seed)
    m = pair_max_crossing(b.values, i, j)
    weight = np.exp(-m / cfg.sigma_sb)
    if u is not None and cfg.use_softmax_term:
        probs = u.flat()
        hard = np.argmax(probs, axis=1)
        same = hard[i] == hard[j]
        d = np.abs(probs[i, hard[i]] - probs[j, hard[i]])
        w_sm = np.where(same, np.exp(-d / cfg.sigma_sm), 0.0)
        weight = np.exp(w_sm) * weight
    return AffinityGraph.from_edges(h * w, i, j, weight, shape=(h, w))
