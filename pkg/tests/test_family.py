import math

import numpy as np
import pytest

from graphsurf import BaseManifold, HeightField, build_geometry
from graphsurf.errors import InvalidFamilyError
from graphsurf.estimators import estimate_sobolev_constant
from graphsurf.family import (
    FamilySpec,
    c1_alpha_norm,
    family_sweep,
    jacobian_bounds,
    sample_height_field,
)
from graphsurf.geometry import graph_map_jacobian

SMALL = {"Sobolev": {"p": 1.0}, "CZ_B": {"p": 2.0}}


@pytest.fixture(scope="module")
def torus():
    return BaseManifold.flat_torus((16, 16))


def test_band_zero_gives_constant_shift(torus):
    psi = sample_height_field(FamilySpec(torus, 0.1, band_limit=0), 0)
    np.testing.assert_allclose(np.abs(psi.values), 0.09, rtol=1e-14)


def test_rescaled_c1_norm(torus):
    spec = FamilySpec(torus, 0.1, seed=5)
    for sid in range(4):
        psi = sample_height_field(spec, sid)
        assert psi.c1_norm() == pytest.approx(0.09, abs=1e-12)
    np.testing.assert_array_equal(sample_height_field(spec, 2).values, sample_height_field(spec, 2).values)
    assert not np.array_equal(sample_height_field(spec, 2).values, sample_height_field(spec, 3).values)


def test_samples_nested_across_delta(torus):
    spec = FamilySpec(torus, 0.1, seed=1)
    a = sample_height_field(spec, 0, 0.02).values
    b = sample_height_field(spec, 0, 0.1).values
    np.testing.assert_allclose(5 * a, b, rtol=1e-13)


def test_holder_target(torus):
    spec = FamilySpec(torus, 0.1, alpha=0.5)
    psi = sample_height_field(spec, 0)
    assert c1_alpha_norm(psi, 0.5) == pytest.approx(0.09, rel=1e-12)
    assert psi.c1_norm() < 0.1


def test_sphere_samples():
    base = BaseManifold.sphere((16, 32))
    psi = sample_height_field(FamilySpec(base, 0.2, seed=2), 0)
    assert psi.c1_norm() == pytest.approx(0.18, abs=1e-12)
    M = build_geometry(base, psi)
    lo, hi = jacobian_bounds(base, 0.2)
    jac = graph_map_jacobian(base, psi)
    assert lo <= jac.bounds[0] and jac.bounds[1] <= hi
    c = (1 + 0.4) * (1 + 0.2) ** 2
    assert 4 * math.pi / c <= M.volume <= c * 4 * math.pi


def test_invalid_specs(torus):
    sphere = BaseManifold.sphere((8, 16))
    for kwargs in ({"delta": -0.1}, {"delta": 0.1, "samples": 0}, {"delta": 0.1, "alpha": 1.5}):
        with pytest.raises(InvalidFamilyError) as err:
            FamilySpec(torus, **kwargs)
        assert err.value.code == "invalid-family"
    with pytest.raises(InvalidFamilyError):
        FamilySpec(sphere, 1.0)
    with pytest.raises(InvalidFamilyError):
        family_sweep(FamilySpec(torus, 0.1), [0.1, -1.0])


def test_grid_override(torus):
    spec = FamilySpec(torus, 0.1, grid_shape=(12, 12))
    assert spec.base.grid_shape == (12, 12)
    assert sample_height_field(spec, 0).values.shape == (12, 12)


def test_delta_zero_reproduces_base(torus):
    spec = FamilySpec(torus, 0.0)
    psi = sample_height_field(spec, 0)
    assert np.all(psi.values == 0)
    res = family_sweep(spec, [0.0], SMALL, trials=3)
    base_value = estimate_sobolev_constant(build_geometry(torus), 1, trials=3).value
    assert res.records[0].constants["Sobolev"] == base_value
    assert res.reference["Sobolev"] == base_value
    assert res.reference["CZ_B"] == 0.0


def test_jacobian_bounds_shrink_to_one(torus):
    sphere = BaseManifold.sphere((8, 16))
    for base in (torus, sphere):
        lo, hi = jacobian_bounds(base, 1e-9)
        assert lo == pytest.approx(1.0) and hi == pytest.approx(1.0)
        lo2, hi2 = jacobian_bounds(base, 0.1)
        assert lo2 < lo and hi2 > hi


def test_sweep_records_and_aggregates(torus):
    spec = FamilySpec(torus, 0.1, samples=3, seed=4)
    res = family_sweep(spec, [0.1, 0.02], SMALL, trials=3)
    assert [(r.delta, r.sample_id) for r in res.records] == [(d, s) for d in (0.02, 0.1) for s in range(3)]
    assert res.success_fraction == 1.0
    for rec in res.records:
        assert rec.jpsi_ok
        assert rec.c1_norm_actual == pytest.approx(0.9 * rec.delta, abs=1e-12)
        assert set(rec.h_lq) == {3, 4}
        assert rec.h_lq[3] <= rec.h_lq[4] * (4 * math.pi**2) ** (1 / 3 - 1 / 4) * 1.01
    for agg in res.aggregates:
        rows = [r for r in res.records if r.delta == agg["delta"]]
        assert agg["CZ_B"] == max(r.constants["CZ_B"] for r in rows)
        assert agg["succeeded"] == 3
    assert res.trend["CZ_B"]["smallest_delta"] == 0.02


def test_sweep_max_monotone_in_sample_count(torus):
    few = family_sweep(FamilySpec(torus, 0.1, samples=2, seed=9), [0.1], {"CZ_B": {"p": 2.0}})
    many = family_sweep(FamilySpec(torus, 0.1, samples=5, seed=9), [0.1], {"CZ_B": {"p": 2.0}})
    assert many.aggregates[0]["CZ_B"] >= few.aggregates[0]["CZ_B"]
    assert [r.constants for r in many.records[:2]] == [r.constants for r in few.records]


def test_sweep_workers_match_serial(torus):
    spec = FamilySpec(torus, 0.1, samples=2, seed=3)
    serial = family_sweep(spec, [0.05], {"CZ_B": {"p": 2.0}})
    pooled = family_sweep(spec, [0.05], {"CZ_B": {"p": 2.0}}, workers=2)
    assert [r.constants for r in serial.records] == [r.constants for r in pooled.records]


def test_failed_sample_becomes_record():
    # an estimator error is logged on the record, the sample itself still counts
    base = BaseManifold.flat_torus((8, 8))
    res = family_sweep(FamilySpec(base, 0.1), [0.1], {"CZ_B": {"p": 0.5}})
    assert res.records[0].ok
    assert math.isnan(res.records[0].constants["CZ_B"])
    assert "invalid-exponent" in res.records[0].message


def test_torus_jacobian_close_to_one(torus):
    spec = FamilySpec(torus, 0.3, samples=5, seed=8)
    for sid in range(5):
        jac = graph_map_jacobian(torus, sample_height_field(spec, sid)).JPsi
        assert np.max(np.abs(jac - 1)) <= 3 * 0.3


def test_volume_of_graph_over_flat_torus(torus):
    spec = FamilySpec(torus, 0.1, samples=4)
    res = family_sweep(spec, [0.1], {"CZ_B": {"p": 2.0}})
    for rec in res.records:
        # sqrt(1 + |grad psi|^2) <= sqrt(1 + delta^2)
        assert 4 * math.pi**2 <= rec.volume <= 4 * math.pi**2 * math.sqrt(1 + 0.01)


def test_height_field_zero_is_exact(torus):
    assert np.all(HeightField.zero(torus).values == 0.0)
