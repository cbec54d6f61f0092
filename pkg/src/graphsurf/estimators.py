"""Empirical lower bounds for the constants of functional inequalities on M.

Each estimator maximizes an inequality quotient over a seeded family of
random band-limited test fields, followed by a short random-perturbation
ascent from the best candidate.  The returned value is the largest quotient
seen, so it is a lower bound on the optimal constant.  The Poincaré
constant at ``p = 2`` is instead computed from the first nonzero
eigenvalue of the Laplace-Beltrami operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import (
    TensorField,
    covariant_derivative,
    hessian_and_laplacian,
    iterated_covariant_derivative,
    laplace_beltrami_matrix,
)
from .errors import (
    ConvergenceError,
    ExcludedCaseError,
    InvalidExponentError,
    NoValidExponentError,
    UndefinedRatioError,
    UnsupportedOrderError,
)
from .geometry import GeometryBundle, _sh_basis
from .norms import holder_norm, lp_norm, wkp_norm

CANDIDATE_BAND = 8
ASCENT_STEPS = 50


class Inequality(str, Enum):
    SOBOLEV = "Sobolev"
    MORREY = "Morrey"
    POINCARE = "Poincare"
    SOBOLEV_POINCARE = "SobolevPoincare"
    GN = "GN"
    CZ_B = "CZ_B"
    SCHAUDER_B = "Schauder_B"
    CZ_FN = "CZ_fn"
    CZ_GRAD_B = "CZ_gradB"


@dataclass(frozen=True)
class ConstantEstimate:
    """Best quotient found for one inequality on one surface."""

    inequality: Inequality
    value: float
    witness: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.value >= 0.0:
            raise ValueError(f"constant estimate must be nonnegative, got {self.value}")

    def params_str(self) -> str:
        return ";".join(f"{k}={_fmt_param(v)}" for k, v in self.params.items())


def _fmt_param(v):
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


# ---------------------------------------------------------------------------
# candidate fields


def random_band_field(base, band_limit: int, rng) -> np.ndarray:
    """Random band-limited scalar field on the base grid.

    Modes up to ``band_limit`` get standard normal coefficients damped by
    ``1 / (1 + |k|^2)`` (``1 / (1 + l(l+1))`` on the sphere).
    """
    if base.is_sphere:
        ls = np.concatenate([np.full(2 * l + 1, l) for l in range(band_limit + 1)])
        coeffs = rng.standard_normal(ls.size) / (1.0 + ls * (ls + 1.0))
        return np.tensordot(coeffs, _sh_basis(base, band_limit), axes=(0, 0))
    band = min(band_limit, min(base.grid_shape) // 2 - 1)
    modes = np.arange(-band, band + 1)
    k = np.stack(np.meshgrid(*([modes] * base.dim), indexing="ij"), axis=-1).reshape(-1, base.dim)
    coeffs = rng.standard_normal((k.shape[0], 2)) / (1.0 + np.sum(k * k, axis=1))[:, None]
    spec = np.zeros(base.grid_shape, dtype=complex)
    spec[tuple(k.T)] = coeffs[:, 0] + 1j * coeffs[:, 1]
    return np.real(np.fft.ifftn(spec)) * base.npoints


def candidate_field(base, seed: int, index: int, band_limit: int = CANDIDATE_BAND) -> np.ndarray:
    """Test field number ``index``; each ``(seed, index)`` owns its own generator."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))
    return random_band_field(base, band_limit, rng)


def _maximize(bundle, quotient, trials, seed, ascent_steps=ASCENT_STEPS):
    """Largest quotient over random candidates plus perturbation ascent.

    ``quotient`` maps grid values to a float, or ``None`` when the quotient
    is undefined for that candidate.  Ties keep the first candidate found.
    """
    base = bundle.base
    best_val, best_u, best_tag = -np.inf, None, "none"
    for i in range(trials):
        u = candidate_field(base, seed, i)
        val = quotient(u)
        if val is not None and val > best_val:
            best_val, best_u, best_tag = val, u, f"random candidate {i}"
    if best_u is None:
        return 0.0, "no admissible candidate"
    accepted = 0
    for t in range(ascent_steps):
        pert = candidate_field(base, seed, trials + t)
        step = 0.3 * 0.95**t * _rms(best_u) / max(_rms(pert), 1e-300)
        trial = best_u + step * pert
        val = quotient(trial)
        if val is not None and val > best_val:
            best_val, best_u = val, trial
            accepted += 1
    witness = best_tag if accepted == 0 else f"{best_tag} + {accepted} ascent steps"
    return float(best_val), witness


def _rms(u):
    return float(np.sqrt(np.mean(u * u)))


def _grad_norm(u: TensorField, p) -> float:
    return lp_norm(covariant_derivative(u), p)


def _mean(u: TensorField) -> float:
    w = u.bundle.measure_weights
    return float(np.sum(u.components * w) / np.sum(w))


# ---------------------------------------------------------------------------
# Sobolev and Morrey


def sobolev_conjugate(p, n):
    p = float(p)
    if not 1.0 <= p < n:
        raise InvalidExponentError(f"Sobolev exponent needs 1 <= p < n={n}, got p={p}")
    return n * p / (n - p)


def estimate_sobolev_constant(M: GeometryBundle, p, trials: int = 20, seed: int = 0) -> ConstantEstimate:
    """Best ``||u||_{p*} / ||u||_{W^{1,p}}`` over the candidate family."""
    n = M.dim
    pstar = sobolev_conjugate(p, n)

    def quotient(values):
        u = M.scalar(values)
        den = wkp_norm(u, 1, p)
        return None if den == 0.0 else lp_norm(u, pstar) / den

    value, witness = _maximize(M, quotient, trials, seed)
    return ConstantEstimate(Inequality.SOBOLEV, value, witness, {"p": float(p), "p_star": pstar})


def estimate_morrey_constant(M: GeometryBundle, p, trials: int = 10, seed: int = 0) -> ConstantEstimate:
    """Best ``||u||_{C^{0,alpha}} / ||u||_{W^{1,p}}`` with ``alpha = 1 - n/p``."""
    n = M.dim
    p = float(p)
    if not p > n:
        raise InvalidExponentError(f"Morrey embedding needs p > n={n}, got p={p}")
    alpha = 1.0 - n / p

    def quotient(values):
        u = M.scalar(values)
        den = wkp_norm(u, 1, p)
        return None if den == 0.0 else holder_norm(u, alpha)[0] / den

    value, witness = _maximize(M, quotient, trials, seed)
    return ConstantEstimate(Inequality.MORREY, value, witness, {"p": p, "alpha": alpha})


# ---------------------------------------------------------------------------
# Poincaré


def _factorize(mat):
    n = mat.shape[0]
    density = mat.nnz / float(n * n)
    if density > 0.05:
        lu = la.lu_factor(mat.toarray())
        return lambda b: la.lu_solve(lu, b)
    lu = spla.splu(mat.tocsc())
    return lu.solve


def poincare_eigenvalue(
    M: GeometryBundle, tol: float = 1e-8, max_iter: int = 500, block: int = 10, seed: int = 0
):
    """Smallest nonzero eigenvalue of ``-Delta`` on ``M``.

    Block inverse iteration on mean-zero fields: each step solves the
    bordered system ``[[-L, 1], [w^T, 0]] [x; c] = [y; 0]``, which inverts
    ``-L`` on the complement of the constants.  A Rayleigh-Ritz step on the
    block separates the near-degenerate low modes.

    Returns
    -------
    (lam, vector, iterations)
        ``vector`` is the Ritz vector on the grid, normalized in ``L^2(M)``.
    """
    L = laplace_beltrami_matrix(M)
    npts = L.shape[0]
    w = M.measure_weights.ravel()
    ones = np.ones((npts, 1))
    bordered = sp.bmat([[-L, sp.csr_matrix(ones)], [sp.csr_matrix(w[None, :]), None]], format="csc")
    solve = _factorize(bordered)
    sq = np.sqrt(w)

    def orthonormal(y):
        q, _ = np.linalg.qr(sq[:, None] * y)
        return q / sq[:, None]

    k = min(block, npts - 1)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9E37]))
    x = rng.standard_normal((npts, k))
    x -= (w @ x) / w.sum()
    x = orthonormal(x)
    history = []
    lam_prev = np.nan
    for it in range(1, max_iter + 1):
        rhs = np.vstack([x, np.zeros((1, k))])
        y = solve(rhs)[:npts]
        x = orthonormal(y)
        # Ritz pairs of -L on span(x) in the weighted inner product
        small = x.T @ (w[:, None] * (-(L @ x)))
        vals, vecs = la.eig(small)
        order = np.argsort(vals.real)
        lam = float(vals.real[order[0]])
        history.append(lam)
        if it > 1 and abs(lam - lam_prev) <= tol * abs(lam):
            v = np.real(x @ vecs[:, order[0]])
            v /= math.sqrt(float(np.sum(w * v * v)))
            return lam, v.reshape(M.base.grid_shape), it
        x = np.real(x @ vecs[:, order])
        x = orthonormal(x)
        lam_prev = lam
    raise ConvergenceError(
        f"inverse iteration did not reach tolerance {tol} in {max_iter} iterations",
        {"iterations": max_iter, "last_eigenvalues": history[-5:], "block": k},
    )


def estimate_poincare_constant(M: GeometryBundle, p=2.0, trials: int = 20, seed: int = 0) -> ConstantEstimate:
    """Poincaré-Wirtinger constant ``sup ||u - mean u||_p / ||grad u||_p``.

    ``p = 2`` uses ``1 / sqrt(lambda_1)``; other exponents use sampled
    maximization.
    """
    p = float(p)
    if p < 1.0 or math.isnan(p):
        raise InvalidExponentError(f"exponent p={p} must lie in [1, inf]")
    if p == 2.0:
        lam, _, iters = poincare_eigenvalue(M, seed=seed)
        return ConstantEstimate(
            Inequality.POINCARE,
            1.0 / math.sqrt(lam),
            f"first eigenfunction, lambda_1={lam:.12g} after {iters} iterations",
            {"p": p},
        )

    def quotient(values):
        u = M.scalar(values)
        den = _grad_norm(u, p)
        if den == 0.0:
            return None
        return lp_norm(M.scalar(values - _mean(u)), p) / den

    value, witness = _maximize(M, quotient, trials, seed)
    return ConstantEstimate(Inequality.POINCARE, value, witness, {"p": p})


def poincare_quotient(u: TensorField, p=2.0) -> float:
    """``||u - mean u||_p / ||grad u||_p`` for a single field."""
    den = _grad_norm(u, p)
    if den == 0.0:
        raise UndefinedRatioError("gradient vanishes; constant fields have no Poincaré quotient")
    return lp_norm(u.bundle.scalar(u.components - _mean(u)), p) / den


# ---------------------------------------------------------------------------
# Gagliardo-Nirenberg


def _frac(x):
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    x = float(x)
    if math.isinf(x):
        raise ValueError("infinite values have no fraction")
    return Fraction(x).limit_denominator(10**12)


def _inv(x):
    """Exact ``1/x`` with ``1/inf = 0``."""
    if not isinstance(x, (int, Fraction)) and math.isinf(float(x)):
        return Fraction(0)
    return 1 / _frac(x)


def gn_inverse_exponent(j: int, m: int, r, q, theta, n: int) -> Fraction:
    """Exact ``1/p = j/n + theta (1/r - m/n) + (1 - theta)/q``."""
    if not (0 <= j < m):
        raise InvalidExponentError(f"need integers 0 <= j < m, got j={j}, m={m}")
    for name, val in (("r", r), ("q", q)):
        if float(val) < 1.0:
            raise InvalidExponentError(f"{name}={val} must lie in [1, inf]")
    th = _frac(theta)
    if not Fraction(j, m) <= th <= 1:
        raise InvalidExponentError(f"theta={theta} outside [j/m, 1] = [{Fraction(j, m)}, 1]")
    inv_r = _inv(r)
    if th == 1 and inv_r == Fraction(m - j, n) and inv_r != 1:
        raise ExcludedCaseError(f"r = n/(m-j) = {Fraction(n, m - j)} with theta = 1 is excluded")
    inv_p = Fraction(j, n) + th * (inv_r - Fraction(m, n)) + (1 - th) * _inv(q)
    if inv_p < 0:
        raise NoValidExponentError(f"1/p = {inv_p} is negative")
    return inv_p


def gn_exponent(j: int, m: int, r, q, theta, n: int) -> float:
    """Target exponent ``p`` of the interpolation inequality (``inf`` when ``1/p = 0``)."""
    inv_p = gn_inverse_exponent(j, m, r, q, theta, n)
    return math.inf if inv_p == 0 else float(1 / inv_p)


def _nabla_j(u: TensorField, j: int) -> TensorField:
    return u if j == 0 else iterated_covariant_derivative(u, j)


@dataclass(frozen=True)
class GNCheck:
    lhs: float
    rhs: float
    ratio: float
    p: float
    mean_zero_ratio: float | None = None


def verify_gn_inequality(M: GeometryBundle, u: TensorField, j, m, r, q, theta) -> GNCheck:
    """Both sides of the interpolation inequality for one field.

    ``rhs = (||nabla^m u||_r + ||u||_r)^theta ||u||_q^(1-theta)``.  When
    ``u`` has zero mean, ``mean_zero_ratio`` uses the reduced right side
    ``||nabla^m u||_r^theta ||u||_q^(1-theta)``.
    """
    p = gn_exponent(j, m, r, q, theta, M.dim)
    th = float(theta)
    lhs = lp_norm(_nabla_j(u, j), p)
    top = lp_norm(_nabla_j(u, m), r)
    u_r = lp_norm(u, r)
    u_q = lp_norm(u, q)
    rhs = (top + u_r) ** th * u_q ** (1.0 - th)
    ratio = 0.0 if lhs == 0.0 else lhs / rhs
    mz = None
    w = M.measure_weights
    if abs(np.sum(u.components * w)) <= 1e-10 * max(np.sum(np.abs(u.components) * w), 1e-300):
        red = top**th * u_q ** (1.0 - th)
        mz = 0.0 if lhs == 0.0 else (math.inf if red == 0.0 else lhs / red)
    return GNCheck(lhs, rhs, ratio, p, mz)


def estimate_gn_constant(M: GeometryBundle, j, m, r, q, theta, trials: int = 20, seed: int = 0) -> ConstantEstimate:
    p = gn_exponent(j, m, r, q, theta, M.dim)

    def quotient(values):
        chk = verify_gn_inequality(M, M.scalar(values), j, m, r, q, theta)
        return None if chk.rhs == 0.0 else chk.ratio

    value, witness = _maximize(M, quotient, trials, seed)
    params = {"j": j, "m": m, "r": float(r), "q": float(q), "theta": float(theta), "p": p}
    return ConstantEstimate(Inequality.GN, value, witness, params)


# ---------------------------------------------------------------------------
# Calderón-Zygmund and Schauder quotients


def cz_curvature_ratio(M: GeometryBundle, p) -> float:
    """``||B||_p / (1 + ||H||_p)``."""
    return lp_norm(M.b_field(), p) / (1.0 + lp_norm(M.h_field(), p))


def schauder_curvature_ratio(M: GeometryBundle, alpha, components: str = "chart") -> float:
    """``||B||_{C^{0,alpha}} / (1 + ||H||_{C^{0,alpha}})``."""
    b = holder_norm(M.b_field(), alpha, components)[0]
    h = holder_norm(M.h_field(), alpha, components)[0]
    return b / (1.0 + h)


def cz_function_ratio(M: GeometryBundle, u: TensorField, p) -> float:
    """``||nabla^2 u||_p / (||Delta u||_p + ||u||_p)``."""
    if not np.any(u.components):
        raise UndefinedRatioError("u vanishes identically")
    hess, lap = hessian_and_laplacian(u)
    return lp_norm(hess, p) / (lp_norm(lap, p) + lp_norm(u, p))


def higher_cz_ratio(M: GeometryBundle, p, k: int = 1, allow_second_order: bool = False) -> float:
    """``||nabla^k B||_p / (1 + ||nabla^k H||_p)`` for ``k = 1`` (``k = 2`` on request)."""
    if k not in (1, 2) or (k == 2 and not allow_second_order):
        raise UnsupportedOrderError(f"higher CZ ratio supports k=1 (k=2 behind a flag), got k={k}")
    num = lp_norm(iterated_covariant_derivative(M.b_field(), k), p)
    den = lp_norm(iterated_covariant_derivative(M.h_field(), k), p)
    return num / (1.0 + den)


def mean_curvature_norms(M: GeometryBundle, qs=(3, 4)) -> dict:
    """``||H||_{L^q}`` for the exponents the higher-order estimate depends on."""
    return {q: lp_norm(M.h_field(), q) for q in qs}


def estimate_cz_function_constant(M: GeometryBundle, p, trials: int = 20, seed: int = 0) -> ConstantEstimate:
    def quotient(values):
        if not np.any(values):
            return None
        return cz_function_ratio(M, M.scalar(values), p)

    value, witness = _maximize(M, quotient, trials, seed)
    return ConstantEstimate(Inequality.CZ_FN, value, witness, {"p": float(p)})


def cz_curvature_estimate(M: GeometryBundle, p) -> ConstantEstimate:
    return ConstantEstimate(Inequality.CZ_B, cz_curvature_ratio(M, p), "second fundamental form of M", {"p": float(p)})


def schauder_curvature_estimate(M: GeometryBundle, alpha) -> ConstantEstimate:
    return ConstantEstimate(
        Inequality.SCHAUDER_B, schauder_curvature_ratio(M, alpha), "second fundamental form of M", {"alpha": float(alpha)}
    )


def higher_cz_estimate(M: GeometryBundle, p, k: int = 1) -> ConstantEstimate:
    params = {"p": float(p), "k": k}
    params.update({f"H_L{q}": v for q, v in mean_curvature_norms(M).items()})
    return ConstantEstimate(Inequality.CZ_GRAD_B, higher_cz_ratio(M, p, k), "second fundamental form of M", params)


def sobolev_poincare_constant(M: GeometryBundle, p, trials: int = 20, seed: int = 0) -> ConstantEstimate:
    """Composite bound for ``||u - mean u||_{p*} <= C ||grad u||_p``.

    Applies the Sobolev estimate to ``u - mean u`` and bounds the lower-order
    term with the Poincaré estimate: ``C = C_S (1 + C_P)``.
    """
    cs = estimate_sobolev_constant(M, p, trials, seed)
    cp = estimate_poincare_constant(M, p, trials, seed)
    return ConstantEstimate(
        Inequality.SOBOLEV_POINCARE,
        cs.value * (1.0 + cp.value),
        f"C_S={cs.value:.12g}, C_P={cp.value:.12g}",
        {"p": float(p)},
    )


# ---------------------------------------------------------------------------
# dispatch by name


DEFAULT_ESTIMATORS = {
    "Sobolev": {"p": 1.0},
    "Poincare": {"p": 2.0},
    "GN": {"j": 1, "m": 2, "r": 2.0, "q": 2.0, "theta": 0.75},
    "CZ_B": {"p": 2.0},
    "CZ_fn": {"p": 2.0},
}


def run_estimator(M: GeometryBundle, name: str, params: dict, trials: int = 20, seed: int = 0) -> ConstantEstimate:
    """Evaluate one inequality, selected by its :class:`Inequality` value."""
    ineq = Inequality(name)
    params = dict(params)
    if ineq is Inequality.SOBOLEV:
        return estimate_sobolev_constant(M, params["p"], trials, seed)
    if ineq is Inequality.MORREY:
        return estimate_morrey_constant(M, params["p"], trials, seed)
    if ineq is Inequality.POINCARE:
        return estimate_poincare_constant(M, params.get("p", 2.0), trials, seed)
    if ineq is Inequality.SOBOLEV_POINCARE:
        return sobolev_poincare_constant(M, params["p"], trials, seed)
    if ineq is Inequality.GN:
        keys = ("j", "m", "r", "q", "theta")
        return estimate_gn_constant(M, *(params[k] for k in keys), trials=trials, seed=seed)
    if ineq is Inequality.CZ_B:
        return cz_curvature_estimate(M, params.get("p", 2.0))
    if ineq is Inequality.SCHAUDER_B:
        return schauder_curvature_estimate(M, params.get("alpha", 0.5))
    if ineq is Inequality.CZ_FN:
        return estimate_cz_function_constant(M, params.get("p", 2.0), trials, seed)
    return higher_cz_estimate(M, params.get("p", 2.0), int(params.get("k", 1)))
