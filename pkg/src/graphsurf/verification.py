"""Grid-refinement checks of the geometric identities.

Each identity is evaluated at a coarse and a fine grid and the observed
order ``log(r_coarse / r_fine) / log(N_fine / N_coarse)`` is reported.  A
residual already at rounding level on the fine grid has nothing left to
converge; such checks are marked saturated and pass regardless of order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calculus import (
    codazzi_residual,
    divergence_residual,
    riemann_symmetry_residual,
    simons_residual,
    trace_identity_residual,
)
from .geometry import BaseManifold, HeightField, build_geometry, riemann_from_b

MIN_ORDER = 3.5
SATURATION_FLOOR = 1e-8

CHECKS = ("simons", "codazzi", "riemann_symmetry", "trace_identity", "divergence")


def identity_residuals(M) -> dict:
    """All identity residuals of one surface (max-abs over the grid)."""
    return {
        "simons": float(np.max(np.abs(simons_residual(M).components))),
        "codazzi": codazzi_residual(M),
        "riemann_symmetry": riemann_symmetry_residual(riemann_from_b(M)),
        "trace_identity": trace_identity_residual(M),
        "divergence": divergence_residual(M.h_field()),
    }


@dataclass(frozen=True)
class CheckResult:
    check: str
    grids: tuple
    residuals: tuple
    order: float
    saturated: bool

    @property
    def passed(self) -> bool:
        return self.saturated or self.order >= MIN_ORDER


def observed_order(r_coarse, r_fine, n_coarse, n_fine) -> float:
    if r_fine == 0.0:
        return math.inf
    if r_coarse == 0.0:
        return -math.inf
    return math.log(r_coarse / r_fine) / math.log(n_fine / n_coarse)


def verify_identities(base: BaseManifold, height, grids, floor: float = SATURATION_FLOOR) -> list:
    """Run every identity check on two grids.

    Parameters
    ----------
    base : BaseManifold
        Any grid; it is regridded to each entry of ``grids``.
    height : callable or None
        ``height(*mesh) -> values`` for the height function, or ``None`` for
        the base itself.
    grids : pair of grid shapes, coarse first.
    """
    per_grid = []
    for shape in grids:
        b = base.with_grid(tuple(shape))
        psi = None if height is None else HeightField.from_values(b, height(*b.mesh()))
        per_grid.append(identity_residuals(build_geometry(b, psi)))
    n0, n1 = grids[0][0], grids[1][0]
    out = []
    for name in CHECKS:
        r0, r1 = per_grid[0][name], per_grid[1][name]
        out.append(
            CheckResult(name, tuple(map(tuple, grids)), (r0, r1), observed_order(r0, r1, n0, n1), r1 <= floor)
        )
    return out
