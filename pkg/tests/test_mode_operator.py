import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vpb_spectral import build_basis
from vpb_spectral.collision import assemble_collision, synthetic_collision
from vpb_spectral.errors import BasisError, RegimeError
from vpb_spectral.mode_operator import (
    compose_rotation,
    mode_operator,
    pushforward_from_axis,
    rotation_to_axis,
)


@pytest.fixture(scope="module")
def op4(basis_mid):
    return assemble_collision(basis_mid)


def test_mode_matrix_shape_and_rejections(op4):
    mode = mode_operator(op4, 0.2, 0.5)
    assert mode.matrix.shape == (op4.basis.dim, op4.basis.dim)
    assert mode.s == 0.5
    with pytest.raises(RegimeError):
        mode_operator(op4, 0.0, 0.5)
    with pytest.raises(RegimeError):
        mode_operator(op4, 1.0, 0.5)
    with pytest.raises(BasisError):
        mode_operator(op4, 0.2, np.zeros(3))


@given(st.floats(0.01, 0.9), st.floats(0.1, 2.0), st.integers(0, 2 ** 32 - 1))
def test_numerical_range_is_the_collision_form(eps, s, seed):
    basis = build_basis(2, 8)
    op = synthetic_collision(basis)
    mode = mode_operator(op, eps, s)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
    diss = mode.dissipation(f)
    assert diss == pytest.approx(float(np.real(np.conj(f) @ (op.matrix @ f))), abs=1e-10)
    assert diss <= 1e-10


def test_adjoint_is_reflected_mode(op4):
    mode = mode_operator(op4, 0.1, 0.7)
    refl = mode_operator(op4, 0.1, np.array([-0.7, 0.0, 0.0]))
    lhs = mode.metric @ refl.matrix
    rhs = (mode.metric @ mode.matrix).conj().T
    assert np.max(np.abs(lhs - rhs)) < 1e-12
    assert np.max(np.abs(refl.matrix - np.conj(mode.matrix))) == 0.0


def test_strip_eigenvalues_structure(op4):
    mode = mode_operator(op4, 0.1, 0.7)
    vals, vecs = mode.strip_eigensystem()
    assert vals.shape == (5,)
    assert np.all(vals.real < 0)
    assert np.all(vals.real > -0.3 * op4.spectral_gap())
    # reflection symmetry of the axis mode forces a conjugation-symmetric set
    reals = np.sort(vals[np.abs(vals.imag) < 1e-10].real)
    pair = vals[np.abs(vals.imag) >= 1e-10]
    assert reals.size == 3 and pair.size == 2
    assert pair[0] == pytest.approx(np.conj(pair[1]), abs=1e-12)
    # the two shear branches are exactly degenerate
    assert reals[0] == pytest.approx(reals[1], rel=1e-8) or \
        reals[1] == pytest.approx(reals[2], rel=1e-8)
    # residuals certify genuine eigenpairs
    for k in range(5):
        r = mode.matrix @ vecs[:, k] - vals[k] * vecs[:, k]
        assert np.linalg.norm(r) < 1e-11


def test_spectral_projector(op4):
    mode = mode_operator(op4, 0.15, 0.5)
    vals, vecs = mode.strip_eigensystem()
    proj = mode.spectral_projector(vecs)
    assert np.max(np.abs(proj @ proj - proj)) < 1e-10
    assert np.trace(proj).real == pytest.approx(5.0, abs=1e-10)
    assert np.max(np.abs(proj @ mode.matrix - mode.matrix @ proj)) < 1e-10
    # pairing-orthogonality between distinct eigenvalues
    for i in range(5):
        for j in range(5):
            if abs(vals[i] - vals[j]) > 1e-6:
                assert abs(mode.pair(vecs[:, i], vecs[:, j])) < 1e-9


def test_regime_error_outside_strip(basis_small):
    op = synthetic_collision(basis_small)
    with pytest.raises(RegimeError):
        mode_operator(op, 0.9, 8.0).strip_eigensystem()
    with pytest.raises(BasisError):
        mode_operator(op, 0.2, 0.5).strip_eigensystem(fraction=1.5)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_rotation_to_axis(x, y, z):
    d = np.array([x, y, z])
    n = np.linalg.norm(d)
    if n < 1e-3:
        return
    d = d / n
    rot = rotation_to_axis(d)
    assert np.allclose(rot @ d, [1.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-12)


def test_rotation_invariance_of_collision(op4):
    d = np.array([2.0, -1.0, 2.0]) / 3.0
    t = compose_rotation(op4.basis, rotation_to_axis(d))
    assert np.max(np.abs(t @ t.T - np.eye(op4.basis.dim))) < 1e-12
    assert np.max(np.abs(t @ op4.matrix @ t.T - op4.matrix)) < 1e-11


def test_axis_reduction_intertwines(op4):
    d = np.array([0.48, -0.6, 0.64])
    d /= np.linalg.norm(d)
    t = pushforward_from_axis(op4.basis, d)
    axis = mode_operator(op4, 0.1, 0.7)
    tilted = mode_operator(op4, 0.1, 0.7 * d)
    assert np.max(np.abs(tilted.matrix @ t - t @ axis.matrix)) < 1e-12
    v_axis = axis.strip_eigensystem()[0]
    v_tilt = tilted.strip_eigensystem()[0]
    assert np.allclose(np.sort_complex(v_axis), np.sort_complex(v_tilt), atol=1e-11)


def test_metric_matches_weighted_inner(op4):
    mode = mode_operator(op4, 0.3, 0.9)
    rng = np.random.default_rng(2)
    f = rng.standard_normal(op4.basis.dim) + 1j * rng.standard_normal(op4.basis.dim)
    g = rng.standard_normal(op4.basis.dim)
    assert mode.inner(f, g) == pytest.approx(complex(np.conj(g) @ (mode.metric @ f)), abs=1e-12)
