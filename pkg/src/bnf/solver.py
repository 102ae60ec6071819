"""Global inference: closed-form minimization of the boundary energy.

For one class with softmax probabilities ``f`` the energy is

    E(z) = mu/2 * sum_i d_i (z_i - f_i/d_i)^2 + 1/2 * z^T (D - W) z

whose unique minimizer solves ``(D - alpha W) z = beta f`` with
``alpha = 1/(1+mu)`` and ``beta = mu/(1+mu)``. Each class is an independent
right-hand side of the same SPD system, solved with Jacobi-preconditioned CG.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .core import LabelMap, UnaryField


class ZeroDegreeError(ValueError):
    pass


class ConvergenceError(ArithmeticError):
    def __init__(self, iterations, residual, tol):
        super().__init__(
            f"PCG did not converge in {iterations} iterations: relative residual {residual:.3e} > {tol:.1e}"
        )
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class SolveConfig:
    mu: float = 0.025
    pcg_tol: float = 1e-8
    pcg_max_iter: int = None  # default: ceil(10 * sqrt(n))
    ridge: float = 0.0
    threads: int = 1

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.pcg_tol <= 0:
            raise ValueError(f"pcg_tol must be positive, got {self.pcg_tol}")
        if self.ridge < 0:
            raise ValueError(f"ridge must be nonnegative, got {self.ridge}")

    @property
    def alpha(self):
        return 1.0 / (1.0 + self.mu)

    @property
    def beta(self):
        return self.mu / (1.0 + self.mu)

    def max_iter(self, n):
        if self.pcg_max_iter is not None:
            return self.pcg_max_iter
        return max(1, math.ceil(10 * math.sqrt(n)))


@dataclass(frozen=True, eq=False)
class Solution:
    Z: np.ndarray  # (n, K)
    labels: LabelMap
    iterations: tuple
    residuals: tuple
    energies: tuple


def _degrees(g):
    d = np.asarray(g.degrees, dtype=np.float64)
    if np.any(d <= 0):
        raise ZeroDegreeError(f"{int(np.sum(d <= 0))} pixel(s) have zero degree")
    return d


def energy(g, z, f, mu):
    """Energy of a continuous assignment ``z`` for one class."""
    d = _degrees(g)
    z = np.asarray(z, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    unary = 0.5 * mu * np.sum(d * (z - f / d) ** 2)
    # each undirected edge once: W stores both (i, j) and (j, i)
    coo = g.W.tocoo()
    pairwise = 0.25 * np.sum(coo.data * (z[coo.row] - z[coo.col]) ** 2)
    return float(unary + pairwise)


def energy_gradient(g, z, f, mu):
    d = _degrees(g)
    z = np.asarray(z, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    return mu * (d * z - f) + (d * z - g.W @ z)


def system_matrix(g, alpha, ridge=0.0):
    """``D - alpha W + ridge I`` as CSR."""
    return (sparse.diags(g.degrees + ridge) - alpha * g.W).tocsr()


def pcg(A, b, tol=1e-8, max_iter=None, x0=None):
    """Jacobi-preconditioned conjugate gradient for SPD ``A``.

    Stops when ``||b - A x|| <= tol * ||b||``. Returns ``(x, iterations,
    relative_residual)``; raises :class:`ConvergenceError` if the tolerance is
    not met within ``max_iter`` iterations.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    max_iter = n if max_iter is None else max_iter
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    inv_diag = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = np.dot(r, z)
    res = np.linalg.norm(r) / bnorm
    it = 0
    while res > tol and it < max_iter:
        Ap = A @ p
        step = rz / np.dot(p, Ap)
        x += step * p
        r -= step * Ap
        z = inv_diag * r
        rz_new = np.dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        res = np.linalg.norm(r) / bnorm
    if res > tol:
        # The recurrence can drift; judge by the true residual before giving up.
        res = np.linalg.norm(b - A @ x) / bnorm
        if res > tol:
            raise ConvergenceError(it, res, tol)
    return x, it, float(res)


def _as_matrix(F):
    if isinstance(F, UnaryField):
        return F.flat()
    Fm = np.asarray(F, dtype=np.float64)
    return Fm[:, None] if Fm.ndim == 1 else Fm


def argmax_rows(Z, shape, num_classes=None):
    k = Z.shape[1] if num_classes is None else num_classes
    return LabelMap(np.argmax(Z, axis=1).reshape(shape), k)


def closed_form_solve(g, F, cfg=SolveConfig()):
    """Minimize the energy for every class of ``F`` and label pixels by row argmax.

    ``F`` is a :class:`~bnf.core.UnaryField` on the graph's image, or an
    ``(n, K)`` array.
    """
    Fm = _as_matrix(F)
    n, k = Fm.shape
    if n != g.n:
        raise ValueError(f"unary field has {n} pixels, graph has {g.n}")
    if cfg.ridge == 0.0:
        _degrees(g)
    A = system_matrix(g, cfg.alpha, cfg.ridge)
    rhs = cfg.beta * Fm
    max_iter = cfg.max_iter(n)

    def solve(col):
        return pcg(A, np.ascontiguousarray(rhs[:, col]), cfg.pcg_tol, max_iter)

    if cfg.threads != 1 and k > 1:
        workers = None if cfg.threads <= 0 else cfg.threads
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve, range(k)))
    else:
        results = [solve(c) for c in range(k)]

    Z = np.column_stack([x for x, _, _ in results])
    shape = g.shape if g.shape[0] * g.shape[1] == n else (1, n)
    energies = tuple(energy(g, Z[:, c], Fm[:, c], cfg.mu) for c in range(k)) if np.all(g.degrees > 0) else ()
    return Solution(
        Z=Z,
        labels=argmax_rows(Z, shape),
        iterations=tuple(it for _, it, _ in results),
        residuals=tuple(res for _, _, res in results),
        energies=energies,
    )


# --- ICM baseline ----------------------------------------------------------

_LOG_FLOOR = 1e-12


def unary_costs(F):
    """``-log f_i(k)`` as an ``(n, K)`` array (probabilities floored at 1e-12)."""
    Fm = _as_matrix(F)
    return -np.log(np.maximum(Fm, _LOG_FLOOR))


def potts_energy(g, costs, labels):
    """Discrete energy: unary costs plus ``w_ij`` for every undirected edge cut."""
    lab = np.asarray(labels.labels if hasattr(labels, "labels") else labels).ravel()
    coo = sparse.triu(g.W, k=1).tocoo()
    cut = lab[coo.row] != lab[coo.col]
    return float(costs[np.arange(len(lab)), lab].sum() + coo.data[cut].sum())


def icm_baseline(g, F, sweeps=10, init=None):
    """Iterated conditional modes on the Potts energy, starting from the unary argmax.

    Pixels are visited in raster order and each takes the label minimizing its
    local energy given current neighbours; a label changes only on strict
    improvement, so the total energy never increases. Stops early once a sweep
    changes nothing.
    """
    costs = unary_costs(F)
    n, k = costs.shape
    lab = np.argmax(-costs, axis=1) if init is None else np.asarray(init).ravel().copy()
    indptr, indices, data = g.W.indptr, g.W.indices, g.W.data
    for _ in range(sweeps):
        changed = 0
        for i in range(n):
            lo, hi = indptr[i], indptr[i + 1]
            agree = np.bincount(lab[indices[lo:hi]], weights=data[lo:hi], minlength=k)
            local = costs[i] - agree  # + degree, constant over labels
            best = int(np.argmin(local))
            if local[best] < local[lab[i]]:
                lab[i] = best
                changed += 1
        if not changed:
            break
    shape = g.shape if g.shape[0] * g.shape[1] == n else (1, n)
    return LabelMap(lab.reshape(shape), k)
