"""Function and tensor norms on a discretized hypersurface.

Pointwise tensor norms use the induced metric, integrals use the Riemannian
quadrature of the bundle, and the two pair-sum quantities (fractional
Gagliardo seminorm, Hölder seminorm) use ambient chordal distances between
grid points.  Pair sums run over row blocks so memory stays bounded.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .calculus import _LETTERS, MAX_DERIVATIVE_ORDER, TensorField, iterated_covariant_derivative
from .errors import InvalidExponentError, InvalidFieldError, UnsupportedOrderError

MAX_PAIR_POINTS = 2**16
_BLOCK_ROWS = 256


def _check_p(p):
    p = float(p)
    if np.isnan(p) or p < 1.0:
        raise InvalidExponentError(f"exponent p={p} must lie in [1, inf]")
    return p


def pointwise_norm(T: TensorField) -> np.ndarray:
    """``|T| = sqrt(g(T, T))`` at every grid point."""
    comps = T.components
    if T.rank == 0:
        return np.abs(comps)
    idx = _LETTERS[: T.rank]
    raised = comps
    for s in range(T.rank):
        out = idx[:s] + "z" + idx[s + 1 :]
        raised = np.einsum(f"...z{idx[s]},...{idx}->...{out}", T.bundle.g_inv, raised)
    sq = np.einsum(f"...{idx},...{idx}->...", raised, comps)
    return np.sqrt(np.maximum(sq, 0.0))


def lp_norm(T: TensorField, p) -> float:
    """``(int |T|^p dmu)^(1/p)``; ``p = inf`` gives the grid supremum."""
    p = _check_p(p)
    mag = pointwise_norm(T)
    if np.isinf(p):
        return float(mag.max())
    w = T.bundle.measure_weights
    return float(np.sum(mag**p * w) ** (1.0 / p))


def wkp_norm(u: TensorField, k: int, p) -> float:
    """Sum of ``lp_norm(nabla^j u, p)`` for ``j = 0..k``."""
    p = _check_p(p)
    if not 0 <= k <= MAX_DERIVATIVE_ORDER:
        raise UnsupportedOrderError(f"W^{{k,p}} with k={k} outside 0..{MAX_DERIVATIVE_ORDER}")
    total = lp_norm(u, p)
    for j in range(1, k + 1):
        total += lp_norm(iterated_covariant_derivative(u, j), p)
    return total


# ---------------------------------------------------------------------------
# pair sums


def _points(bundle):
    pts = bundle.embedding.reshape(-1, bundle.base.ambient_dim)
    if pts.shape[0] > MAX_PAIR_POINTS:
        raise InvalidFieldError(f"pair sums are capped at {MAX_PAIR_POINTS} grid points, got {pts.shape[0]}")
    return pts


def _distances(bundle, pts, rows):
    """Ambient distances from the points ``rows`` to all points."""
    diff = pts[rows, None, :] - pts[None, :, :]
    base = bundle.base
    if not base.is_sphere:
        # the torus directions wrap: minimum image on the first n coordinates
        periods = np.asarray(base.periods)
        flat = diff[..., : base.dim]
        diff[..., : base.dim] = flat - periods * np.round(flat / periods)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _row_blocks(npts, mask=None):
    rows = np.arange(npts) if mask is None else np.flatnonzero(mask)
    return [rows[i : i + _BLOCK_ROWS] for i in range(0, rows.size, _BLOCK_ROWS)]


def _map_blocks(fn, blocks, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, blocks))
    return [fn(b) for b in blocks]


def gagliardo_seminorm(u: TensorField, s, p, workers: int = 1) -> float:
    """Fractional ``W^{s,p}`` seminorm by the direct double integral over M.

    The diagonal ``x = y`` is left out of the pair sum.
    """
    if u.rank != 0:
        raise InvalidFieldError("gagliardo_seminorm expects a scalar field")
    s = float(s)
    if not 0.0 < s < 1.0:
        raise InvalidExponentError(f"fractional order s={s} must lie in (0, 1)")
    p = _check_p(p)
    if np.isinf(p):
        raise InvalidExponentError("gagliardo_seminorm needs a finite p")
    bundle = u.bundle
    pts = _points(bundle)
    vals = u.components.ravel()
    w = bundle.measure_weights.ravel()
    expo = bundle.dim + s * p

    def block(rows):
        d = _distances(bundle, pts, rows)
        d[np.arange(rows.size), rows] = np.inf
        num = np.abs(vals[rows, None] - vals[None, :]) ** p
        return float(np.sum(w[rows, None] * w[None, :] * num / d**expo))

    partial_sums = _map_blocks(block, _row_blocks(pts.shape[0]), workers)
    return float(np.sum(partial_sums) ** (1.0 / p))


def ambient_components(T: TensorField) -> np.ndarray:
    """Components of ``T`` extended to ambient vectors by tangential projection.

    ``T~(v1, ..., vm) = T(pi v1, ..., pi vm)`` in the canonical basis of
    ``R^{n+1}``; the result has shape ``grid + (n+1,) * rank``.
    """
    bundle = T.bundle
    # dual frame: pi(v) = g^{ij} <v, d_j phi> d_i phi, so T~ picks up E^i_a = g^{ij} d_j phi_a
    dual = np.einsum("...ij,...ja->...ia", bundle.g_inv, bundle.tangents)
    idx = _LETTERS[: T.rank]
    out = T.components
    for s in range(T.rank):
        res = idx[:s] + "Z" + idx[s + 1 :]
        out = np.einsum(f"...{idx},...{idx[s]}Z->...{res}", out, dual)
    return out


def holder_norm(T: TensorField, alpha, components: str = "chart", region=None, workers: int = 1):
    """Hölder ``C^{0,alpha}`` norm and seminorm of a tensor field.

    The seminorm is the sum over components of each component's Hölder
    quotient supremum over grid pairs, with ambient chordal distances.
    ``components`` selects chart components (``"chart"``) or the ambient
    extension of :func:`ambient_components` (``"ambient"``).  ``region`` is
    an optional boolean grid mask restricting both points of each pair.

    Returns
    -------
    (norm, seminorm) : tuple of float
        ``norm = sup |T| + seminorm``.  Grid pairs only see a subset of the
        continuum pairs, so both are lower bounds of the continuum values.
    """
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise InvalidExponentError(f"Hölder exponent alpha={alpha} must lie in (0, 1]")
    if components == "chart":
        comps = T.components
    elif components == "ambient":
        comps = ambient_components(T)
    else:
        raise ValueError(f"unknown component convention {components!r}")
    bundle = T.bundle
    pts = _points(bundle)
    npts = pts.shape[0]
    flat = comps.reshape(npts, -1)
    mask = None if region is None else np.asarray(region, dtype=bool).ravel()
    cols = np.arange(npts) if mask is None else np.flatnonzero(mask)

    def block(rows):
        d = _distances(bundle, pts, rows)[:, cols]
        d = np.where(rows[:, None] == cols[None, :], np.inf, d)
        dpow = d**alpha
        best = np.zeros(flat.shape[1])
        for c in range(flat.shape[1]):
            q = np.abs(flat[rows, c][:, None] - flat[cols, c][None, :]) / dpow
            best[c] = q.max()
        return best

    blocks = _row_blocks(npts, mask)
    per_block = _map_blocks(block, blocks, workers)
    seminorm = float(np.sum(np.max(per_block, axis=0))) if per_block else 0.0
    sup = pointwise_norm(T).ravel()
    if mask is not None:
        sup = sup[mask]
    return float(sup.max()) + seminorm, seminorm
