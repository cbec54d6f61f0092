"""Base hypersurfaces, height fields and graph-hypersurface geometry.

A hypersurface ``M`` is parametrised over the chart of a fixed base ``M0``
by ``phi(x) = X0(x) + psi(x) nu0(x)``.  Two bases are built in: the flat
torus (``M0 = T^n x {0}`` inside ``T^n x R``, unit normal ``e_{n+1}``) and
the round 2-sphere of radius ``R`` in a colatitude/longitude chart whose
colatitude samples are offset by half a cell so that no sample sits on a
pole.

Sign conventions: ``nu`` points outward (positive inner product with the
base normal) and ``B_ij = -<d_ij phi, nu>``, so the round sphere has
positive mean curvature ``H = g^{ij} B_ij``.
"""
from __future__ import annotations

import csv
import functools
import io
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.special import sph_harm_y

from .calculus import (
    TensorField,
    component_parity,
    gradient_components,
    partial,
    second_partial,
)
from .errors import (
    DegenerateGraphError,
    InvalidFieldError,
    ProjectionUndefinedError,
    TubularNeighborhoodError,
    UnsupportedBaseError,
)


class BaseKind(str, Enum):
    FLAT_TORUS = "torus"
    SPHERE = "sphere"


def fejer_weights(n: int) -> np.ndarray:
    """Fejer's first rule on the nodes ``theta_k = (k + 1/2) pi / n``.

    ``sum_k w_k f(cos theta_k)`` integrates ``f`` over [-1, 1], exactly for
    polynomials of degree < n.
    """
    theta = (np.arange(n) + 0.5) * np.pi / n
    j = np.arange(1, n // 2 + 1)
    s = np.cos(2.0 * np.outer(theta, j)) / (4.0 * j**2 - 1.0)
    return (2.0 / n) * (1.0 - 2.0 * s.sum(axis=1))


@dataclass(frozen=True)
class BaseManifold:
    """The fixed compact base hypersurface and its sampling grid.

    Use :meth:`flat_torus` or :meth:`sphere` rather than the raw
    constructor.  ``scheme`` selects the torus derivative discretisation
    (``"spectral"`` or ``"fd4"``); the sphere always uses 4th-order
    differences in colatitude and trigonometric derivatives in longitude.
    """

    kind: BaseKind
    dim: int
    grid_shape: tuple
    periods: tuple = ()
    radius: float = 1.0
    scheme: str = "spectral"

    def __post_init__(self):
        try:
            kind = BaseKind(self.kind)
        except ValueError:
            raise UnsupportedBaseError(f"unsupported base kind {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "grid_shape", tuple(int(s) for s in self.grid_shape))
        if self.dim < 1 or len(self.grid_shape) != self.dim:
            raise UnsupportedBaseError(f"grid_shape {self.grid_shape} does not match dim {self.dim}")
        if kind is BaseKind.FLAT_TORUS:
            periods = tuple(float(p) for p in self.periods) or (2.0 * math.pi,) * self.dim
            if len(periods) != self.dim or min(periods) <= 0:
                raise UnsupportedBaseError(f"invalid torus periods {periods}")
            object.__setattr__(self, "periods", periods)
            if self.scheme not in ("spectral", "fd4"):
                raise UnsupportedBaseError(f"unknown derivative scheme {self.scheme!r}")
            if min(self.grid_shape) < 5:
                raise UnsupportedBaseError("torus grids need at least 5 points per axis")
        else:
            if self.dim != 2:
                raise UnsupportedBaseError("only the 2-sphere is supported")
            if self.radius <= 0:
                raise UnsupportedBaseError("sphere radius must be positive")
            n_theta, n_phi = self.grid_shape
            if n_phi % 2 or n_theta < 4:
                raise UnsupportedBaseError("sphere grid needs an even longitude count and >= 4 latitudes")
            object.__setattr__(self, "periods", (math.pi, 2.0 * math.pi))
            object.__setattr__(self, "scheme", "fd4-spectral")

    @classmethod
    def flat_torus(cls, grid_shape=(64, 64), periods=None, scheme="spectral"):
        grid_shape = tuple(grid_shape)
        return cls(BaseKind.FLAT_TORUS, len(grid_shape), grid_shape, tuple(periods or ()), 1.0, scheme)

    @classmethod
    def sphere(cls, grid_shape=(64, 128), radius=1.0):
        return cls(BaseKind.SPHERE, 2, tuple(grid_shape), (), float(radius))

    def with_grid(self, grid_shape):
        return replace(self, grid_shape=tuple(grid_shape))

    # -- grid ---------------------------------------------------------------

    @property
    def is_sphere(self) -> bool:
        return self.kind is BaseKind.SPHERE

    @property
    def ambient_dim(self) -> int:
        return self.dim + 1

    @property
    def npoints(self) -> int:
        return int(np.prod(self.grid_shape))

    @property
    def tubular_width(self) -> float:
        return self.radius if self.is_sphere else math.inf

    @property
    def spacing(self) -> tuple:
        return tuple(p / n for p, n in zip(self.periods, self.grid_shape))

    @property
    def coords(self) -> tuple:
        if self.is_sphere:
            n_theta, n_phi = self.grid_shape
            theta = (np.arange(n_theta) + 0.5) * np.pi / n_theta
            phi = np.arange(n_phi) * 2.0 * np.pi / n_phi
            return theta, phi
        return tuple(np.arange(n) * p / n for n, p in zip(self.grid_shape, self.periods))

    def mesh(self) -> tuple:
        return tuple(np.meshgrid(*self.coords, indexing="ij"))

    def chart_weights(self) -> np.ndarray:
        """Quadrature weights for ``integral ... dx`` over the chart domain."""
        if self.is_sphere:
            theta, _ = self.coords
            # Fejer weights already contain sin(theta); sqrt(det g) supplies it again
            w_theta = fejer_weights(self.grid_shape[0]) / np.sin(theta)
            w_phi = 2.0 * np.pi / self.grid_shape[1]
            return np.broadcast_to((w_theta * w_phi)[:, None], self.grid_shape).copy()
        return np.full(self.grid_shape, float(np.prod(self.spacing)))

    # -- analytic base geometry ---------------------------------------------

    def embedding(self) -> np.ndarray:
        """Ambient position ``X0`` of every grid point, shape ``grid + (n+1,)``."""
        if self.is_sphere:
            return self.radius * self._unit_sphere()[0]
        x = np.stack(self.mesh(), axis=-1)
        return np.concatenate([x, np.zeros(self.grid_shape + (1,))], axis=-1)

    def tangents(self) -> np.ndarray:
        """``d_i X0``, shape ``grid + (n, n+1)``."""
        if self.is_sphere:
            return self.radius * self._unit_sphere()[1]
        eye = np.eye(self.dim, self.dim + 1)
        return np.broadcast_to(eye, self.grid_shape + eye.shape).copy()

    def second_derivatives(self) -> np.ndarray:
        """``d_ij X0``, shape ``grid + (n, n, n+1)``."""
        if self.is_sphere:
            return self.radius * self._unit_sphere()[2]
        return np.zeros(self.grid_shape + (self.dim, self.dim, self.dim + 1))

    def normal(self) -> np.ndarray:
        if self.is_sphere:
            return self._unit_sphere()[0]
        nu = np.zeros(self.grid_shape + (self.dim + 1,))
        nu[..., -1] = 1.0
        return nu

    def normal_derivatives(self) -> np.ndarray:
        """``d_i nu0`` (the Weingarten map in chart form), shape ``grid + (n, n+1)``."""
        if self.is_sphere:
            return self._unit_sphere()[1]
        return np.zeros(self.grid_shape + (self.dim, self.dim + 1))

    def metric(self) -> np.ndarray:
        t = self.tangents()
        return np.einsum("...ia,...ja->...ij", t, t)

    @property
    def b0_sup(self) -> float:
        """``sup |B0|`` in operator norm (largest principal curvature)."""
        return 1.0 / self.radius if self.is_sphere else 0.0

    @property
    def volume(self) -> float:
        if self.is_sphere:
            return 4.0 * math.pi * self.radius**2
        return float(np.prod(self.periods))

    def _unit_sphere(self):
        theta, phi = self.mesh()
        st, ct, sp_, cp = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
        zero = np.zeros_like(theta)
        x = np.stack([st * cp, st * sp_, ct], axis=-1)
        d_theta = np.stack([ct * cp, ct * sp_, -st], axis=-1)
        d_phi = np.stack([-st * sp_, st * cp, zero], axis=-1)
        d_tt = -x
        d_tp = np.stack([-ct * sp_, ct * cp, zero], axis=-1)
        d_pp = np.stack([-st * cp, -st * sp_, zero], axis=-1)
        first = np.stack([d_theta, d_phi], axis=-2)
        second = np.stack([np.stack([d_tt, d_tp], axis=-2), np.stack([d_tp, d_pp], axis=-2)], axis=-3)
        return x, first, second


# ---------------------------------------------------------------------------
# height fields


def _real_sph_harm(l, m, theta, phi):
    if m > 0:
        return math.sqrt(2.0) * np.real(sph_harm_y(l, m, theta, phi))
    if m < 0:
        return math.sqrt(2.0) * np.imag(sph_harm_y(l, -m, theta, phi))
    return np.real(sph_harm_y(l, 0, theta, phi))


@functools.lru_cache(maxsize=8)
def _sh_basis(base: BaseManifold, band_limit: int) -> np.ndarray:
    theta, phi = base.mesh()
    ls = np.array([l for l in range(band_limit + 1) for _ in range(-l, l + 1)])
    ms = np.array([m for l in range(band_limit + 1) for m in range(-l, l + 1)])
    shape = (-1, 1, 1)
    y = sph_harm_y(ls.reshape(shape), np.abs(ms).reshape(shape), theta, phi)
    ms = ms.reshape(shape)
    basis = np.where(ms > 0, math.sqrt(2.0) * y.real, np.where(ms < 0, math.sqrt(2.0) * y.imag, y.real))
    basis.setflags(write=False)
    return basis


def sh_index(l: int, m: int) -> int:
    return l * l + l + m


@dataclass(frozen=True, eq=False)
class HeightField:
    """Height function ``psi`` sampled on the base grid.

    ``coeffs`` are the full discrete Fourier coefficients (``fftn / N``) on
    the torus, or real spherical-harmonic coefficients indexed by
    :func:`sh_index` on the sphere.
    """

    base: BaseManifold
    values: np.ndarray
    coeffs: np.ndarray | None = None
    band_limit: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.base.grid_shape:
            raise InvalidFieldError(f"height field shape {values.shape} != grid {self.base.grid_shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidFieldError("height field contains NaN or infinite values")
        object.__setattr__(self, "values", values)

    @classmethod
    def zero(cls, base):
        return cls.constant(base, 0.0)

    @classmethod
    def constant(cls, base, c):
        if base.is_sphere:
            coeffs = np.zeros(1)
            coeffs[0] = c * math.sqrt(4.0 * math.pi)
            return cls.from_coeffs(base, coeffs, 0)
        return cls(base, np.full(base.grid_shape, float(c)), np.fft.fftn(np.full(base.grid_shape, float(c))) / base.npoints, 0)

    @classmethod
    def from_coeffs(cls, base, coeffs, band_limit=None):
        coeffs = np.asarray(coeffs)
        if base.is_sphere:
            L = int(round(math.sqrt(coeffs.size))) - 1
            if (L + 1) ** 2 != coeffs.size:
                raise InvalidFieldError("spherical-harmonic coefficient count must be (L+1)^2")
            values = np.tensordot(coeffs.astype(float), _sh_basis(base, L), axes=(0, 0))
            return cls(base, values, coeffs.astype(float), L if band_limit is None else band_limit)
        if coeffs.shape != base.grid_shape:
            raise InvalidFieldError("Fourier coefficient array must match the grid shape")
        values = np.real(np.fft.ifftn(coeffs * base.npoints))
        return cls(base, values, coeffs, band_limit)

    @classmethod
    def from_values(cls, base, values, band_limit=None):
        values = np.asarray(values, dtype=float)
        if base.is_sphere:
            # projection onto harmonics is only done on request: it costs O(L^2 N)
            if band_limit is None:
                return cls(base, values, None, None)
            w = base.chart_weights() * np.sin(base.mesh()[0])
            coeffs = np.tensordot(_sh_basis(base, band_limit), values * w, axes=((1, 2), (0, 1)))
            return cls(base, values, coeffs, band_limit)
        return cls(base, values, np.fft.fftn(values) / base.npoints, band_limit)

    @classmethod
    def from_function(cls, base, fn, band_limit=None):
        return cls.from_values(base, fn(*base.mesh()), band_limit)

    def synthesize(self) -> np.ndarray:
        if self.coeffs is None:
            return self.values.copy()
        if self.base.is_sphere:
            L = int(round(math.sqrt(self.coeffs.size))) - 1
            return np.tensordot(self.coeffs, _sh_basis(self.base, L), axes=(0, 0))
        return np.real(np.fft.ifftn(self.coeffs * self.base.npoints))

    def scaled(self, factor):
        coeffs = None if self.coeffs is None else self.coeffs * factor
        return HeightField(self.base, self.values * factor, coeffs, self.band_limit)

    def gradient(self) -> np.ndarray:
        """Chart partial derivatives ``d_i psi``, shape ``grid + (n,)``."""
        return gradient_components(self.base, self.values)

    def gradient_norm(self) -> np.ndarray:
        """Pointwise ``|grad^0 psi|`` measured in the base metric."""
        d = self.gradient()
        g0inv = np.linalg.inv(self.base.metric())
        return np.sqrt(np.maximum(np.einsum("...i,...ij,...j->...", d, g0inv, d), 0.0))

    def c1_norm(self) -> float:
        """``sup |psi| + sup |grad^0 psi|`` over the grid."""
        return float(np.max(np.abs(self.values)) + np.max(self.gradient_norm()))


# ---------------------------------------------------------------------------
# geometry bundle


@dataclass(frozen=True, eq=False)
class GeometryBundle:
    """Pointwise geometry of a graph hypersurface on the base grid.

    Array layouts (``G`` = grid shape, ``n`` = intrinsic dimension):
    ``embedding`` G+(n+1,), ``tangents`` G+(n, n+1), ``g``/``g_inv``/``B``
    G+(n, n), ``sqrt_det_g``/``H`` G, ``nu`` G+(n+1,), ``gamma`` G+(n, n, n)
    with ``gamma[..., i, j, k] = Gamma^i_{jk}``.
    """

    base: BaseManifold
    psi: HeightField | None
    embedding: np.ndarray
    tangents: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det_g: np.ndarray
    nu: np.ndarray
    B: np.ndarray
    H: np.ndarray
    gamma: np.ndarray | None = None
    measure_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "measure_weights", self.sqrt_det_g * self.base.chart_weights())

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def volume(self) -> float:
        return float(np.sum(self.measure_weights))

    @property
    def complete(self) -> bool:
        return self.gamma is not None

    def scalar(self, values) -> TensorField:
        return TensorField(np.asarray(values, dtype=float), 0, self)

    def b_field(self) -> TensorField:
        return TensorField(self.B, 2, self)

    def h_field(self) -> TensorField:
        return TensorField(self.H, 0, self)

    def dump_csv(self, extra_columns=None) -> str:
        """Flat CSV dump: grid index, embedding, g, B, H (+ any extra columns)."""
        n, na = self.dim, self.base.ambient_dim
        header = [f"i{a}" for a in range(n)] + [f"x{a}" for a in range(na)]
        header += [f"g{i}{j}" for i in range(n) for j in range(n)]
        header += [f"B{i}{j}" for i in range(n) for j in range(n)]
        header += ["H"]
        cols = [self.embedding.reshape(-1, na), self.g.reshape(-1, n * n), self.B.reshape(-1, n * n), self.H.reshape(-1, 1)]
        for name, values in (extra_columns or {}).items():
            header.append(name)
            cols.append(np.asarray(values).reshape(-1, 1))
        data = np.concatenate(cols, axis=1)
        index = np.stack(np.unravel_index(np.arange(self.base.npoints), self.base.grid_shape), axis=1)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for idx, row in zip(index, data):
            writer.writerow([str(int(v)) for v in idx] + [repr(float(v)) for v in row])
        return buf.getvalue()


def _check_height(base, psi):
    if psi.base != base:
        raise InvalidFieldError("height field lives on a different base grid")
    if not np.all(np.isfinite(psi.values)):
        raise InvalidFieldError("height field contains NaN")
    if np.max(np.abs(psi.values)) >= base.tubular_width:
        raise TubularNeighborhoodError(
            f"sup|psi| = {np.max(np.abs(psi.values)):.6g} >= tubular width {base.tubular_width:.6g}"
        )


def _metric_inverse(g):
    det = np.linalg.det(g)
    if not np.all(det > 0):
        raise DegenerateGraphError(f"metric is degenerate (min det g = {det.min():.3g})")
    g_inv = np.linalg.inv(g)
    return 0.5 * (g_inv + np.swapaxes(g_inv, -1, -2)), np.sqrt(det)


def flat_graph_geometry(psi: HeightField) -> GeometryBundle:
    """Geometry of the graph ``x -> (x, psi(x))`` over the flat torus via the graph formulas."""
    base = psi.base
    if base.kind is not BaseKind.FLAT_TORUS:
        raise UnsupportedBaseError("flat_graph_geometry requires a flat torus base")
    _check_height(base, psi)
    n = base.dim
    f = psi.values
    df = psi.gradient()
    hess = np.empty(base.grid_shape + (n, n))
    for i in range(n):
        hess[..., i, i] = second_partial(base, f, i)
        for j in range(i + 1, n):
            hess[..., i, j] = hess[..., j, i] = partial(base, df[..., j], i)
    grad2 = np.sum(df**2, axis=-1)
    w = np.sqrt(1.0 + grad2)
    g = np.eye(n) + df[..., :, None] * df[..., None, :]
    g_inv = np.eye(n) - df[..., :, None] * df[..., None, :] / (w**2)[..., None, None]
    nu = np.concatenate([-df, np.ones(base.grid_shape + (1,))], axis=-1) / w[..., None]
    B = -hess / w[..., None, None]
    H = np.einsum("...ij,...ij->...", g_inv, B)
    embedding = np.concatenate([np.stack(base.mesh(), axis=-1), f[..., None]], axis=-1)
    tangents = np.concatenate([np.broadcast_to(np.eye(n), base.grid_shape + (n, n)), df[..., None]], axis=-1)
    return GeometryBundle(base, psi, embedding, tangents, g, g_inv, w, nu, B, H)


def embedded_graph_geometry(base: BaseManifold, psi: HeightField) -> GeometryBundle:
    """Geometry of ``phi = X0 + psi nu0`` from the embedding's first and second derivatives.

    The displacement ``psi nu0`` is differentiated on the grid; the base
    parametrisation ``X0`` is differentiated analytically.
    """
    _check_height(base, psi)
    n = base.dim
    disp = psi.values[..., None] * base.normal()
    d_disp = [partial(base, disp, i) for i in range(n)]
    tangents = base.tangents() + np.stack(d_disp, axis=-2)
    second = base.second_derivatives().copy()
    for i in range(n):
        second[..., i, i, :] += second_partial(base, disp, i)
        for j in range(i + 1, n):
            mixed = partial(base, d_disp[j], i)
            second[..., i, j, :] += mixed
            second[..., j, i, :] += mixed
    g = np.einsum("...ia,...ja->...ij", tangents, tangents)
    g = 0.5 * (g + np.swapaxes(g, -1, -2))
    g_inv, sqrt_det = _metric_inverse(g)
    # normal: component of nu0 orthogonal to the tangent space
    nu0 = base.normal()
    proj = np.einsum("...ia,...a->...i", tangents, nu0)
    nu = nu0 - np.einsum("...i,...ij,...ja->...a", proj, g_inv, tangents)
    nu_len = np.linalg.norm(nu, axis=-1)
    if not np.all(nu_len > 1e-12):
        raise DegenerateGraphError("normal direction degenerates (graph folds over the base normal)")
    nu = nu / nu_len[..., None]
    B = -np.einsum("...ija,...a->...ij", second, nu)
    B = 0.5 * (B + np.swapaxes(B, -1, -2))
    H = np.einsum("...ij,...ij->...", g_inv, B)
    embedding = base.embedding() + disp
    return GeometryBundle(base, psi, embedding, tangents, g, g_inv, sqrt_det, nu, B, H)


def christoffel(bundle: GeometryBundle) -> GeometryBundle:
    """Fill ``gamma`` with ``1/2 g^{il} (d_j g_kl + d_k g_jl - d_l g_jk)``."""
    base = bundle.base
    det = np.linalg.det(bundle.g)
    if not np.all(det > 0):
        raise DegenerateGraphError("metric is singular; Christoffel symbols undefined")
    # dg[..., l, j, k] = d_l g_jk
    dg = gradient_components(base, bundle.g, component_parity(base, 2))
    lowered = dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1)  # [..., j, k, l]
    gamma = 0.5 * np.einsum("...il,...jkl->...ijk", bundle.g_inv, lowered)
    gamma = 0.5 * (gamma + np.swapaxes(gamma, -1, -2))
    return replace(bundle, gamma=gamma)


def build_geometry(base: BaseManifold, psi: HeightField | None = None) -> GeometryBundle:
    """Embedded geometry with Christoffel symbols, ready for the calculus operators."""
    if psi is None:
        psi = HeightField.zero(base)
    return christoffel(embedded_graph_geometry(base, psi))


def riemann_from_b(bundle: GeometryBundle) -> TensorField:
    """Riemann tensor via the Gauss equation ``R_ijkl = B_ik B_jl - B_il B_jk``."""
    B = bundle.B
    R = np.einsum("...ik,...jl->...ijkl", B, B) - np.einsum("...il,...jk->...ijkl", B, B)
    return TensorField(R, 4, bundle)


@dataclass(frozen=True, eq=False)
class JacobianData:
    """Differential of ``Psi: M0 -> M`` and its n-volume distortion ``JPsi``."""

    dPsi: np.ndarray
    JPsi: np.ndarray

    @property
    def bounds(self):
        return float(self.JPsi.min()), float(self.JPsi.max())


def graph_map_jacobian(base: BaseManifold, psi: HeightField) -> JacobianData:
    """``dPsi = Id + dpsi (x) nu0 + psi dnu0`` applied to the chart basis, and its Jacobian."""
    _check_height(base, psi)
    dpsi = psi.gradient()
    dpsi_vecs = (
        base.tangents()
        + dpsi[..., :, None] * base.normal()[..., None, :]
        + psi.values[..., None, None] * base.normal_derivatives()
    )
    G = np.einsum("...ia,...ja->...ij", dpsi_vecs, dpsi_vecs)
    jac = np.sqrt(np.linalg.det(G) / np.linalg.det(base.metric()))
    return JacobianData(dpsi_vecs, jac)


def tubular_projection(base: BaseManifold, x) -> tuple:
    """Signed distance to the base (negative inside) and the nearest-point foot."""
    x = np.asarray(x, dtype=float)
    if x.shape != (base.ambient_dim,):
        raise ProjectionUndefinedError(f"point must have {base.ambient_dim} coordinates")
    if base.is_sphere:
        r = float(np.linalg.norm(x))
        d = r - base.radius
        if r == 0.0 or abs(d) >= base.tubular_width:
            raise ProjectionUndefinedError(f"point at distance {d:.6g} is outside the tubular neighbourhood")
        return d, base.radius * x / r
    foot = x.copy()
    foot[-1] = 0.0
    return float(x[-1]), foot
