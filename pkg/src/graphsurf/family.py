"""Random graph hypersurfaces ``C^1``-close to a fixed base, and sweeps over them.

A sample with parameter ``delta`` is the graph of ``psi = 0.9 delta psi0 / c``
over the base, where ``psi0`` is a random band-limited field and ``c`` its
``C^1`` norm.  ``psi0`` depends only on ``(seed, sample_id)``, so the family
at a smaller ``delta`` is the family at a larger one, rescaled.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .calculus import TensorField
from .errors import GraphSurfError, InvalidFamilyError
from .estimators import DEFAULT_ESTIMATORS, mean_curvature_norms, random_band_field, run_estimator
from .geometry import BaseManifold, HeightField, build_geometry, graph_map_jacobian
from .norms import holder_norm, lp_norm

RESCALE_TARGET = 0.9
_MAX_REDRAWS = 16


@dataclass(frozen=True)
class FamilySpec:
    """Parameters of a sampled family ``C^1_delta`` (or ``C^{1,alpha}_delta``)."""

    base: BaseManifold
    delta: float
    alpha: float | None = None
    band_limit: int = 8
    samples: int = 1
    seed: int = 0
    grid_shape: tuple | None = None

    def __post_init__(self):
        if self.grid_shape is not None and tuple(self.grid_shape) != self.base.grid_shape:
            object.__setattr__(self, "base", self.base.with_grid(tuple(self.grid_shape)))
        object.__setattr__(self, "grid_shape", self.base.grid_shape)
        check_delta(self.base, self.delta)
        if self.samples < 1:
            raise InvalidFamilyError(f"samples must be >= 1, got {self.samples}")
        if self.band_limit < 0:
            raise InvalidFamilyError(f"band_limit must be >= 0, got {self.band_limit}")
        if self.alpha is not None and not 0.0 < self.alpha <= 1.0:
            raise InvalidFamilyError(f"alpha={self.alpha} must lie in (0, 1]")

    def with_delta(self, delta) -> FamilySpec:
        return FamilySpec(self.base, delta, self.alpha, self.band_limit, self.samples, self.seed)


def check_delta(base, delta):
    delta = float(delta)
    if not 0.0 <= delta < base.tubular_width:
        raise InvalidFamilyError(f"delta={delta} must lie in [0, {base.tubular_width}) for this base")


def unit_shape(spec: FamilySpec, sample_id: int) -> HeightField:
    """The unscaled random field ``psi0`` of a sample."""
    for attempt in range(_MAX_REDRAWS):
        rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), int(sample_id), attempt]))
        values = random_band_field(spec.base, spec.band_limit, rng)
        if np.any(values != 0.0):
            return HeightField.from_values(spec.base, values)
    raise InvalidFamilyError(f"sample {sample_id}: every redraw vanished identically")


def c1_alpha_norm(psi: HeightField, alpha) -> float:
    """``||psi||_{C^1} + [grad psi]_alpha`` over the base grid."""
    flat = build_geometry(psi.base)
    grad = TensorField(psi.gradient(), 1, flat)
    return psi.c1_norm() + holder_norm(grad, alpha)[1]


def sample_height_field(spec: FamilySpec, sample_id: int, delta=None) -> HeightField:
    """Height field of sample ``sample_id``, rescaled to ``C^1`` norm ``0.9 delta``.

    With ``spec.alpha`` set the target is the ``C^{1,alpha}`` norm instead,
    which also keeps the ``C^1`` norm below ``delta``.
    """
    delta = spec.delta if delta is None else float(delta)
    check_delta(spec.base, delta)
    if delta == 0.0:
        return HeightField.zero(spec.base)
    psi0 = unit_shape(spec, sample_id)
    c = psi0.c1_norm() if spec.alpha is None else c1_alpha_norm(psi0, spec.alpha)
    return psi0.scaled(RESCALE_TARGET * delta / c)


def jacobian_bounds(base: BaseManifold, delta) -> tuple:
    """Admissible range of ``JPsi`` for graphs with ``C^1`` norm below ``delta``."""
    n = base.dim
    b0 = base.b0_sup
    lo = (1.0 - delta * b0) ** n / (1.0 + 2.0 * delta)
    hi = (1.0 + 2.0 * delta) * (1.0 + delta * b0) ** n
    return lo, hi


@dataclass
class FamilySweepRecord:
    sample_id: int
    delta: float
    status: str = "ok"
    message: str = ""
    c1_norm_actual: float = math.nan
    constants: dict = field(default_factory=dict)
    volume: float = math.nan
    b_lp: float = math.nan
    h_lp: float = math.nan
    h_lq: dict = field(default_factory=dict)
    jpsi_min: float = math.nan
    jpsi_max: float = math.nan
    jpsi_ok: bool | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _evaluate(job):
    spec, delta, sample_id, estimators, trials, est_seed, lp = job
    rec = FamilySweepRecord(sample_id=sample_id, delta=float(delta))
    try:
        psi = sample_height_field(spec, sample_id, delta)
        rec.c1_norm_actual = psi.c1_norm()
        M = build_geometry(spec.base, psi)
        jac = graph_map_jacobian(spec.base, psi)
        rec.jpsi_min, rec.jpsi_max = jac.bounds
        lo, hi = jacobian_bounds(spec.base, delta)
        rec.jpsi_ok = bool(lo <= rec.jpsi_min and rec.jpsi_max <= hi)
        rec.volume = M.volume
        rec.b_lp = lp_norm(M.b_field(), lp)
        rec.h_lp = lp_norm(M.h_field(), lp)
        rec.h_lq = mean_curvature_norms(M)
        for name, params in estimators.items():
            try:
                rec.constants[name] = run_estimator(M, name, params, trials, est_seed).value
            except GraphSurfError as exc:
                rec.constants[name] = math.nan
                rec.message += f"{name}: {exc.code}; "
    except GraphSurfError as exc:
        rec.status = exc.code
        rec.message = str(exc)
    return rec


@dataclass
class SweepResult:
    records: list
    aggregates: list
    reference: dict
    trend: dict

    @property
    def success_fraction(self) -> float:
        return sum(r.ok for r in self.records) / max(len(self.records), 1)


def family_sweep(
    spec: FamilySpec,
    deltas,
    inequalities=None,
    trials: int = 20,
    workers: int = 1,
    lp: float = 2.0,
    estimator_seed: int | None = None,
) -> SweepResult:
    """Sample the family at each ``delta`` and estimate the selected constants.

    ``inequalities`` maps inequality names to parameter dicts (see
    :data:`estimators.DEFAULT_ESTIMATORS`).  Every surface uses the same
    estimator seed (``spec.seed`` unless ``estimator_seed`` is given), so
    constants are compared on identical candidate fields.
    A sample whose construction fails becomes a record with a failure status.

    Returns
    -------
    SweepResult
        ``records`` sorted by ``(delta, sample_id)``, one aggregate dict per
        delta with the max of each constant over successful samples,
        ``reference`` with the base's own constants, and ``trend`` comparing
        the smallest-delta maxima with the reference.
    """
    estimators = dict(DEFAULT_ESTIMATORS if inequalities is None else inequalities)
    est_seed = spec.seed if estimator_seed is None else int(estimator_seed)
    deltas = [float(d) for d in deltas]
    for d in deltas:
        check_delta(spec.base, d)
    jobs = [
        (spec, d, sid, estimators, trials, est_seed, lp) for d in deltas for sid in range(spec.samples)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_evaluate, jobs))
    else:
        records = [_evaluate(j) for j in jobs]
    records.sort(key=lambda r: (r.delta, r.sample_id))

    reference = _evaluate((spec, 0.0, 0, estimators, trials, est_seed, lp)).constants
    aggregates = []
    for d in sorted(set(deltas)):
        rows = [r for r in records if r.delta == d and r.ok]
        agg = {"delta": d, "samples": sum(r.delta == d for r in records), "succeeded": len(rows)}
        for name in estimators:
            vals = [r.constants[name] for r in rows if not math.isnan(r.constants.get(name, math.nan))]
            agg[name] = max(vals) if vals else math.nan
        aggregates.append(agg)
    trend = {}
    if aggregates:
        first = aggregates[0]
        for name in estimators:
            ref = reference.get(name, math.nan)
            trend[name] = {"smallest_delta": first["delta"], "max_at_smallest": first[name], "reference": ref}
    return SweepResult(records, aggregates, reference, trend)
