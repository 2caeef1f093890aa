import numpy as np
import pytest

from retrofitctl.errors import AssumptionViolation, DimensionError
from retrofitctl.geometry import (
    Plant,
    arrange_outputs,
    build_coords,
    check_assumption,
    normal_form,
    relative_degree,
    reorder_transform,
)
from retrofitctl.reference import random_plant, stable_4, unstable_4


def _plant(A, L, C, q=1, w=1):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    return Plant(A, L, np.ones((n, q)), np.ones((w, n)), C)


def _companion():
    return _plant([[0.0, 1.0], [-2.0, -3.0]], [[0.0], [1.0]], np.eye(2))


def _markov_degree(c, A, L, tol=1e-9):
    """Relative degree straight from the definition, by repeated multiplication."""
    row = np.asarray(c, dtype=float)
    for k in range(A.shape[0]):
        if np.linalg.norm(row @ L) > tol * max(1.0, np.linalg.norm(A, 2) ** k):
            return k + 1
        row = row @ A
    return None


def test_plant_dimension_checks():
    with pytest.raises(DimensionError):
        Plant(np.eye(2), np.ones((3, 1)), np.ones((2, 1)), np.ones((1, 2)), np.eye(2))
    p = stable_4()
    assert (p.n, p.m, p.q, p.p, p.w_dim) == (4, 1, 1, 2, 1)
    assert p.G_yv.shape == (2, 1) and p.G_wu.shape == (1, 1)


def test_identity_outputs_have_unit_degree():
    prof = relative_degree(_plant(-np.eye(3), np.eye(3), np.eye(3)))
    assert prof.r == (1, 1, 1)
    assert np.allclose(prof.decoupling_rows, np.eye(3))


def test_double_integrator_degree_two():
    prof = relative_degree(_plant([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], [[1.0, 0.0]]))
    assert prof.r == (2,)
    assert np.allclose(prof.leading, [[1.0]])


def test_companion_needs_swap():
    plant = _companion()
    prof = relative_degree(plant)
    assert prof.r == (2, 1)
    T = reorder_transform(prof)
    assert np.array_equal(T, [[0.0, 1.0], [1.0, 0.0]])
    arranged = arrange_outputs(plant)
    assert arranged.r == (1, 2)


def test_sorted_profile_keeps_identity():
    plant = _plant([[0.0, 1.0], [-2.0, -3.0]], [[0.0], [1.0]], [[0.0, 1.0], [1.0, 0.0]])
    assert np.array_equal(reorder_transform(relative_degree(plant)), np.eye(2))


def test_tie_block_is_rotated():
    # both outputs see v directly with the same weight
    plant = _plant(np.diag([-1.0, -2.0]), [[1.0], [1.0]], np.eye(2))
    assert relative_degree(plant).r == (1, 1)
    prof = arrange_outputs(plant)
    assert prof.r[0] == 1 < prof.r[1] == 2
    TC = prof.T @ plant.C
    assert abs(TC[1] @ plant.L[:, 0]) < 1e-12
    assert np.allclose(np.abs(TC[0]), [1 / np.sqrt(2)] * 2)


def test_capped_output_sorted_last():
    A = np.diag([-1.0, -2.0])
    plant = _plant(A, [[1.0], [0.0]], [[0.0, 1.0], [1.0, 0.0]])
    prof = relative_degree(plant)
    assert prof.capped == (True, False)
    arranged = arrange_outputs(plant)
    assert arranged.r[0] == 1 and arranged.capped == (False, True)


def test_dependent_decoupling_rows_rejected():
    L = np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    plant = Plant(-np.eye(3), L, np.ones((3, 1)), np.ones((1, 3)), np.eye(3))
    with pytest.raises(AssumptionViolation):
        arrange_outputs(plant)


def test_more_inputs_than_outputs_rejected():
    plant = Plant(-np.eye(2), np.eye(2), np.ones((2, 1)), np.ones((1, 2)), [[1.0, 0.0]])
    with pytest.raises(AssumptionViolation):
        reorder_transform(relative_degree(plant))


def test_check_assumption_flags_missing_gap():
    plant = _plant(np.diag([-1.0, -2.0]), [[1.0], [1.0]], np.eye(2))
    with pytest.raises(AssumptionViolation, match="gap"):
        check_assumption(relative_degree(plant))


def test_scalar_coords_have_no_z():
    plant = Plant([[1.0]], [[1.0]], [[1.0]], [[1.0]], [[1.0]])
    coords = build_coords(plant, arrange_outputs(plant))
    assert np.allclose(coords.S, [[1.0]])
    assert coords.Sbar.shape == (0, 1)


def test_companion_coords():
    plant = _companion()
    coords = build_coords(plant, arrange_outputs(plant))
    assert np.allclose(coords.S, [[0.0, 1.0]])
    assert coords.Sbar.shape == (1, 2)
    assert abs(coords.Sbar[0, 0]) > 0.5 and abs(coords.Sbar[0, 1]) < 1e-12
    assert np.allclose(coords.Sbar @ plant.L, 0.0, atol=1e-12)


def _check_coords(plant):
    prof = arrange_outputs(plant)
    m = plant.m
    r = prof.r
    assert list(r) == sorted(r)
    if m < plant.p:
        assert r[m - 1] < r[m]
    TC = prof.T @ plant.C
    for i in range(plant.p):
        independent = _markov_degree(TC[i], plant.A, plant.L)
        if prof.capped[i]:
            assert independent is None or i >= m
        elif i < m:
            assert independent == r[i]
    assert np.linalg.svd(prof.decoupling_rows, compute_uv=False)[-1] > prof.tol
    coords = build_coords(plant, prof)
    stacked = np.vstack([coords.S, coords.Sbar])
    assert stacked.shape == (plant.n, plant.n)
    assert np.allclose(stacked @ np.hstack([coords.S_dagger, coords.Sbar_dagger]), np.eye(plant.n),
                       atol=1e-9 * coords.condition)
    assert np.max(np.abs(coords.Sbar @ plant.L), initial=0.0) < 1e-10 * np.linalg.norm(plant.L)
    assert np.linalg.matrix_rank(coords.S @ plant.L) == m
    nf = normal_form(plant, coords)
    assert np.max(np.abs(nf.B[: coords.nz]), initial=0.0) < 1e-10 * np.linalg.norm(plant.L)


@pytest.mark.parametrize("factory", [stable_4, unstable_4])
def test_reference_plants_need_reorder(factory):
    plant = factory()
    assert relative_degree(plant).r == (2, 1)
    _check_coords(plant)


@pytest.mark.parametrize("seed", range(50))
def test_random_plant_coordinates(seed):
    _check_coords(random_plant(seed))


def test_six_state_coordinates():
    found = 0
    for seed in range(200):
        plant = random_plant(seed, n=6, structured=True)
        prof = arrange_outputs(plant)
        if sum(prof.r[: plant.m]) == 3:
            _check_coords(plant)
            found += 1
    assert found >= 5
