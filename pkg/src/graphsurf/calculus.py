"""Differential operators on grid-sampled tensor fields.

Grid data is stored with the grid axes leading and the tensor slots
trailing, so a rank-``m`` covariant field on an ``n``-dimensional grid has
shape ``grid_shape + (n,) * m``.  Covariant derivatives put the new
(derivative) index in the first tensor slot: ``(nabla T)[..., j, i1, ..., im]``
is ``nabla_j T_{i1...im}``.

Derivatives along periodic axes are trigonometric (FFT) or periodic
4th-order centred differences; the sphere's colatitude axis uses 4th-order
centred differences with ghost rows obtained by reflecting through the
poles (which also shifts longitude by half a turn and flips the sign of
each colatitude component).
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp

from .errors import IncompleteBundleError, InvalidFieldError, UnsupportedOrderError

if TYPE_CHECKING:
    from .geometry import BaseManifold, GeometryBundle

MAX_DERIVATIVE_ORDER = 4
_LETTERS = "abcdefghijklmnop"


# ---------------------------------------------------------------------------
# one-dimensional building blocks


def _spectral(f, axis, length, order):
    n = f.shape[axis]
    k = 2.0 * np.pi * np.fft.rfftfreq(n, d=length / n)
    shape = [1] * f.ndim
    shape[axis] = k.size
    k = k.reshape(shape)
    fh = np.fft.rfft(f, axis=axis)
    if order == 1:
        fh = fh * (1j * k)
        if n % 2 == 0:
            # odd derivative of the Nyquist mode is not representable
            idx = [slice(None)] * f.ndim
            idx[axis] = -1
            fh[tuple(idx)] = 0.0
    else:
        fh = fh * (-(k**2))
    return np.fft.irfft(fh, n=n, axis=axis)


def _fd4_stencil(ext, axis, n, h, order):
    def sl(offset):
        idx = [slice(None)] * ext.ndim
        idx[axis] = slice(2 + offset, 2 + offset + n)
        return ext[tuple(idx)]

    if order == 1:
        return (sl(-2) - 8.0 * sl(-1) + 8.0 * sl(1) - sl(2)) / (12.0 * h)
    return (-sl(-2) + 16.0 * sl(-1) - 30.0 * sl(0) + 16.0 * sl(1) - sl(2)) / (12.0 * h * h)


def _fd4_periodic(f, axis, length, order):
    n = f.shape[axis]
    h = length / n
    idx_lo = [slice(None)] * f.ndim
    idx_hi = [slice(None)] * f.ndim
    idx_lo[axis] = slice(n - 2, n)
    idx_hi[axis] = slice(0, 2)
    ext = np.concatenate([f[tuple(idx_lo)], f, f[tuple(idx_hi)]], axis=axis)
    return _fd4_stencil(ext, axis, n, h, order)


def _fd4_polar(f, h, order, parity):
    """Colatitude derivative (axis 0) on a half-offset sphere grid."""
    n_theta, n_phi = f.shape[0], f.shape[1]
    half = n_phi // 2
    top = parity * np.roll(f[1::-1], half, axis=1)
    bottom = parity * np.roll(f[:-3:-1], half, axis=1)
    ext = np.concatenate([top, f, bottom], axis=0)
    return _fd4_stencil(ext, 0, n_theta, h, order)


def _derivative(base: BaseManifold, f, axis, order, parity):
    f = np.asarray(f, dtype=float)
    if base.is_sphere:
        if axis == 0:
            return _fd4_polar(f, base.spacing[0], order, parity)
        return _spectral(f, axis, 2.0 * np.pi, order)
    if base.scheme == "fd4":
        return _fd4_periodic(f, axis, base.periods[axis], order)
    return _spectral(f, axis, base.periods[axis], order)


def partial(base: BaseManifold, f, axis: int, parity=1.0):
    """First partial derivative of grid data along chart axis ``axis``.

    ``parity`` is the sign picked up by each trailing component under the
    pole reflection of the sphere chart (ignored on the torus); see
    :func:`component_parity`.
    """
    return _derivative(base, f, axis, 1, parity)


def second_partial(base: BaseManifold, f, axis: int, parity=1.0):
    """Pure second derivative along ``axis`` using a direct (compact) stencil."""
    return _derivative(base, f, axis, 2, parity)


def component_parity(base: BaseManifold, rank: int):
    """Reflection sign of each component of a rank-``rank`` chart tensor.

    On the sphere, every colatitude index flips sign across a pole; on the
    torus all parities are +1.
    """
    n = base.dim
    if rank == 0 or not base.is_sphere:
        return 1.0
    counts = np.zeros((n,) * rank, dtype=int)
    for pos in range(rank):
        shape = [1] * rank
        shape[pos] = n
        counts = counts + (np.arange(n) == 0).astype(int).reshape(shape)
    return np.where(counts % 2 == 0, 1.0, -1.0)


def gradient_components(base: BaseManifold, f, parity=1.0):
    """Stack of partial derivatives, derivative index placed right after the grid axes."""
    ng = len(base.grid_shape)
    parts = [partial(base, f, i, parity) for i in range(base.dim)]
    return np.stack(parts, axis=ng)


@functools.lru_cache(maxsize=16)
def derivative_matrix(base: BaseManifold, axis: int, order: int):
    """Sparse matrix of :func:`partial` / :func:`second_partial` on scalar grid data."""
    npts = int(np.prod(base.grid_shape))
    rows, cols, vals = [], [], []
    chunk = max(1, min(npts, 2_000_000 // npts))
    for start in range(0, npts, chunk):
        stop = min(npts, start + chunk)
        eye = np.zeros((stop - start, npts))
        eye[np.arange(stop - start), np.arange(start, stop)] = 1.0
        fields = np.moveaxis(eye.reshape((stop - start,) + base.grid_shape), 0, -1)
        out = _derivative(base, fields, axis, order, 1.0)
        out = np.moveaxis(out, -1, 0).reshape(stop - start, npts)
        out[np.abs(out) < 1e-14 * np.abs(out).max()] = 0.0
        r, c = np.nonzero(out)
        # column (start + r) of the operator
        rows.append(c)
        cols.append(r + start)
        vals.append(out[r, c])
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(npts, npts)
    )
    return mat


# ---------------------------------------------------------------------------
# tensor fields


@dataclass(frozen=True, eq=False)
class TensorField:
    """A covariant rank-``rank`` tensor sampled on the grid of ``bundle``."""

    components: np.ndarray
    rank: int
    bundle: GeometryBundle

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        grid = self.bundle.base.grid_shape
        expected = grid + (self.bundle.base.dim,) * self.rank
        if comps.shape != expected:
            raise InvalidFieldError(f"component shape {comps.shape} != expected {expected}")
        if not np.all(np.isfinite(comps)):
            raise InvalidFieldError("tensor field contains non-finite entries")
        object.__setattr__(self, "components", comps)

    def __add__(self, other):
        return TensorField(self.components + other.components, self.rank, self.bundle)

    def __sub__(self, other):
        return TensorField(self.components - other.components, self.rank, self.bundle)

    def __mul__(self, c):
        return TensorField(c * self.components, self.rank, self.bundle)

    __rmul__ = __mul__


def scalar_field(bundle: GeometryBundle, values) -> TensorField:
    return TensorField(np.asarray(values, dtype=float), 0, bundle)


def _require_gamma(bundle):
    if bundle.gamma is None:
        raise IncompleteBundleError("bundle has no Christoffel symbols; call christoffel() first")


def covariant_derivative(T: TensorField) -> TensorField:
    """Levi-Civita covariant derivative of a covariant tensor field."""
    bundle = T.bundle
    _require_gamma(bundle)
    base = bundle.base
    m = T.rank
    parity = component_parity(base, m)
    out = gradient_components(base, T.components, parity)
    idx = _LETTERS[:m]
    for s in range(m):
        t_idx = idx[:s] + "z" + idx[s + 1 :]
        expr = f"...zy{idx[s]},...{t_idx}->...y{idx}"
        out = out - np.einsum(expr, bundle.gamma, T.components)
    return TensorField(out, m + 1, bundle)


def iterated_covariant_derivative(T: TensorField, k: int) -> TensorField:
    """``k``-fold covariant derivative, ``1 <= k <= 4``."""
    if not 1 <= k <= MAX_DERIVATIVE_ORDER:
        raise UnsupportedOrderError(f"iterated derivative order {k} outside 1..{MAX_DERIVATIVE_ORDER}")
    out = T
    for _ in range(k):
        out = covariant_derivative(out)
    return out


def hessian_and_laplacian(u: TensorField):
    """Covariant Hessian and Laplace-Beltrami operator of a scalar field.

    Pure second derivatives use compact second-derivative stencils; mixed
    ones are composed first derivatives.  Returns ``(hess, lap)``.
    """
    if u.rank != 0:
        raise InvalidFieldError("hessian_and_laplacian expects a scalar field")
    bundle = u.bundle
    _require_gamma(bundle)
    base = bundle.base
    n = base.dim
    f = u.components
    du = [partial(base, f, i) for i in range(n)]
    d2 = np.empty(base.grid_shape + (n, n))
    for i in range(n):
        d2[..., i, i] = second_partial(base, f, i)
        for j in range(i + 1, n):
            mixed = partial(base, du[j], i)
            d2[..., i, j] = mixed
            d2[..., j, i] = mixed
    grad = np.stack(du, axis=-1)
    hess = d2 - np.einsum("...kij,...k->...ij", bundle.gamma, grad)
    hess = 0.5 * (hess + np.swapaxes(hess, -1, -2))
    lap = np.einsum("...ij,...ij->...", bundle.g_inv, hess)
    return TensorField(hess, 2, bundle), TensorField(lap, 0, bundle)


def laplacian(u: TensorField) -> TensorField:
    return hessian_and_laplacian(u)[1]


def laplace_beltrami_matrix(bundle: GeometryBundle):
    """Assemble the discrete Laplace-Beltrami operator as a sparse matrix.

    Applying the matrix to flattened grid values reproduces
    :func:`hessian_and_laplacian` (up to rounding).  Terms whose coefficient
    vanishes to rounding everywhere are dropped to keep the matrix sparse.
    """
    _require_gamma(bundle)
    base = bundle.base
    n = base.dim
    ginv = bundle.g_inv.reshape(-1, n, n)
    first = -np.einsum("...ij,...kij->...k", bundle.g_inv, bundle.gamma).reshape(-1, n)
    scale = np.abs(ginv).max()
    negligible = 1e-13 * scale

    total = sp.csr_matrix((ginv.shape[0], ginv.shape[0]))
    for i in range(n):
        total = total + sp.diags(ginv[:, i, i]) @ derivative_matrix(base, i, 2)
        for j in range(i + 1, n):
            coef = ginv[:, i, j] + ginv[:, j, i]
            if np.abs(coef).max() > negligible:
                mixed = derivative_matrix(base, i, 1) @ derivative_matrix(base, j, 1)
                total = total + sp.diags(coef) @ mixed
    for k in range(n):
        if np.abs(first[:, k]).max() > negligible:
            total = total + sp.diags(first[:, k]) @ derivative_matrix(base, k, 1)
    return total.tocsr()


def rough_laplacian(T: TensorField) -> TensorField:
    """``g^{lm} nabla_l nabla_m T`` for a covariant tensor of any rank.

    Same operator as contracting ``iterated_covariant_derivative(T, 2)``,
    except that the ``d_l d_l T`` part uses compact second-derivative
    stencils along periodic axes, mirroring :func:`hessian_and_laplacian`.
    """
    bundle = T.bundle
    _require_gamma(bundle)
    base = bundle.base
    n, m = base.dim, T.rank
    gam = bundle.gamma
    idx = _LETTERS[:m]
    parity = component_parity(base, m)

    # correction C[..., j, i...] = sum_s Gamma^z_{j i_s} T_{..z..}, so nabla T = dT - C
    corr = np.zeros(base.grid_shape + (n,) * (m + 1))
    for s in range(m):
        t_idx = idx[:s] + "z" + idx[s + 1 :]
        corr = corr + np.einsum(f"...zy{idx[s]},...{t_idx}->...y{idx}", gam, T.components)
    d1 = gradient_components(base, T.components, parity)
    first = d1 - corr

    # d_l (nabla T)_{m i...}, with the pure second derivatives taken compactly
    par1 = component_parity(base, m + 1)
    d_corr = gradient_components(base, corr, par1)
    dd = np.empty(base.grid_shape + (n, n) + (n,) * m)
    for l in range(n):
        for mm in range(n):
            # on the polar axis the composed stencil keeps the discrete umbilic cancellation
            if l == mm and not (base.is_sphere and l == 0):
                dd[(Ellipsis, l, mm) + (slice(None),) * m] = second_partial(base, T.components, l, parity)
            else:
                par_mm = par1[mm] if np.ndim(par1) else par1
                dd[(Ellipsis, l, mm) + (slice(None),) * m] = partial(
                    base, d1[(Ellipsis, mm) + (slice(None),) * m], l, par_mm
                )
    dfirst = dd - d_corr
    idx1 = "w" + idx
    out = dfirst
    for s in range(m + 1):
        t_idx = idx1[:s] + "z" + idx1[s + 1 :]
        out = out - np.einsum(f"...zy{idx1[s]},...{t_idx}->...y{idx1}", gam, first)
    lap = np.einsum(f"...yw,...yw{idx}->...{idx}", bundle.g_inv, out)
    return TensorField(lap, m, bundle)


def integrate_dmu(T: TensorField) -> float:
    """Quadrature of a scalar field against the Riemannian measure."""
    if T.rank != 0:
        raise InvalidFieldError("integrate_dmu expects a scalar field")
    w = T.bundle.measure_weights
    return float(np.sum(T.components * w))


# ---------------------------------------------------------------------------
# geometric identity residuals


def _curvature_fields(bundle):
    return TensorField(bundle.B, 2, bundle), TensorField(bundle.H, 0, bundle)


def b_squared_norm(bundle):
    return np.einsum("...ij,...ik,...jl,...kl->...", bundle.B, bundle.g_inv, bundle.g_inv, bundle.B)


def simons_residual(bundle: GeometryBundle) -> TensorField:
    """``Lap B - nabla^2 H - H B g^-1 B + |B|^2 B``; zero for exact geometry."""
    _require_gamma(bundle)
    B, H = _curvature_fields(bundle)
    lap_b = rough_laplacian(B).components
    d2h = hessian_and_laplacian(H)[0].components
    bgb = np.einsum("...il,...ls,...sj->...ij", bundle.B, bundle.g_inv, bundle.B)
    b2 = b_squared_norm(bundle)
    res = lap_b - d2h - bundle.H[..., None, None] * bgb + b2[..., None, None] * bundle.B
    return TensorField(res, 2, bundle)


def codazzi_residual(bundle: GeometryBundle) -> float:
    """Max over grid and index triples of ``|nabla_i B_jk - nabla_j B_ik|``."""
    _require_gamma(bundle)
    B, _ = _curvature_fields(bundle)
    db = covariant_derivative(B).components
    return float(np.max(np.abs(db - np.swapaxes(db, -3, -2))))


def divergence_residual(u: TensorField) -> float:
    """``|integral of Lap u dmu|`` -- zero on a closed hypersurface."""
    return abs(integrate_dmu(laplacian(u)))


def riemann_symmetry_residual(R: TensorField) -> float:
    """Largest violation of the algebraic symmetries of a (0,4) curvature tensor."""
    c = R.components
    anti_ij = c + np.swapaxes(c, -4, -3)
    anti_kl = c + np.swapaxes(c, -2, -1)
    pairs = c - np.moveaxis(c, (-4, -3), (-2, -1))
    bianchi = c + np.einsum("...iklj->...ijkl", c) + np.einsum("...iljk->...ijkl", c)
    return float(max(np.abs(a).max() for a in (anti_ij, anti_kl, pairs, bianchi)))


def trace_identity_residual(bundle: GeometryBundle) -> float:
    """``max |H - g^{ij} B_ij|``."""
    return float(np.max(np.abs(bundle.H - np.einsum("...ij,...ij->...", bundle.g_inv, bundle.B))))
