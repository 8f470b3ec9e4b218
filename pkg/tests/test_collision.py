import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vpb_spectral import BackendError, build_basis, multiplication_matrices
from vpb_spectral.cache import read_matrix
from vpb_spectral.collision import (
    CollisionQuadrature,
    GammaEvaluator,
    _CollisionGrid,
    assemble_collision,
    collision_frequency_matrix,
    collision_measure_total,
    nu_hard_sphere,
    one_point_integrals,
    synthetic_collision,
)
from vpb_spectral.errors import AssemblyError
from vpb_spectral.velocity_space import hermite_polynomial_table


@pytest.mark.parametrize("gamma", [0.0, 0.5, 1.0])
def test_measure_total_matches_closed_form(gamma):
    grid = _CollisionGrid(CollisionQuadrature.for_degree(6), gamma, 1.0)
    assert grid.total_mass() == pytest.approx(collision_measure_total(gamma), rel=1e-13)


def test_measure_total_hard_sphere_value():
    # 2 pi E|V - Z| with V, Z independent standard Gaussians
    assert collision_measure_total(1.0) == pytest.approx(8.0 * np.sqrt(np.pi), rel=1e-14)
    assert collision_measure_total(1.0, kernel_c=2.0) == pytest.approx(16.0 * np.sqrt(np.pi))


def test_nu_closed_form():
    assert nu_hard_sphere(0.0) == pytest.approx(4.0 * np.sqrt(2.0 * np.pi), rel=1e-13)
    assert nu_hard_sphere(0.0) == pytest.approx(10.0265130985, abs=1e-9)
    r = np.linspace(0.0, 8.0, 200)
    vals = nu_hard_sphere(r)
    assert np.all(np.diff(vals) > 0)
    # linear growth nu ~ 2 pi |v| at large speed
    assert nu_hard_sphere(60.0) / 60.0 == pytest.approx(2.0 * np.pi, rel=1e-3)
    # independent oracle: quadrature of 2 pi E|v - Z| in spherical shells
    from scipy.integrate import quad

    for speed in (0.3, 1.7):
        val = quad(
            lambda y: y / speed * (np.exp(-((y - speed) ** 2) / 2) - np.exp(-((y + speed) ** 2) / 2))
            * y / np.sqrt(2 * np.pi), 0, np.inf)[0]
        assert nu_hard_sphere(speed) == pytest.approx(2 * np.pi * val, rel=1e-10)


def test_collision_frequency_matrix_anchor(basis_mid):
    # exact one-point collision measure vs adaptive Gauss-Hermite of the closed form
    grid = _CollisionGrid(CollisionQuadrature.for_degree(2 * basis_mid.max_degree), 1.0, 1.0)
    numat = collision_frequency_matrix(basis_mid, grid)
    assert numat[0, 0] == pytest.approx(8.0 * np.sqrt(np.pi), rel=1e-12)

    from scipy.special import roots_hermitenorm

    x, w = roots_hermitenorm(48)
    w = w / np.sqrt(2 * np.pi)
    nodes = np.stack([a.ravel() for a in np.meshgrid(x, x, x, indexing="ij")], axis=-1)
    weights = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
    tables = [hermite_polynomial_table(basis_mid.max_degree, nodes[:, k]) for k in range(3)]
    alpha = np.array(basis_mid.multi_indices)
    poly = (tables[0][alpha[:, 0]] * tables[1][alpha[:, 1]] * tables[2][alpha[:, 2]]).T
    poly = poly @ basis_mid.rotation
    nu_vals = nu_hard_sphere(np.linalg.norm(nodes, axis=1))
    ref = poly.T @ ((weights * nu_vals)[:, None] * poly)
    assert np.max(np.abs(numat - ref)) < 1e-6


def test_assembled_matrix_structure(hard_sphere_prod):
    op = hard_sphere_prod
    mat = op.matrix
    assert np.max(np.abs(mat - mat.T)) == 0.0
    for k in range(5):
        assert np.linalg.norm(mat @ op.basis.chi(k)) < 1e-10
    vals = np.linalg.eigvalsh(mat)
    assert vals[-1] < 1e-10
    assert np.sum(np.abs(vals) < 1e-8) == 5
    gap = op.spectral_gap()
    assert 5.0 < gap < 9.0


def test_spectral_gap_shrinks_with_resolution(basis_small, basis_mid, hard_sphere_prod):
    g2 = assemble_collision(basis_small).spectral_gap()
    g4 = assemble_collision(basis_mid).spectral_gap()
    g6 = hard_sphere_prod.spectral_gap()
    assert g2 > g4 > g6 > 0


def test_truncation_gives_exact_restriction(basis_mid, hard_sphere_prod):
    op4 = assemble_collision(basis_mid)
    op6 = hard_sphere_prod
    idx = [i for i, a in enumerate(op6.basis.multi_indices) if sum(a) <= 4]
    sub = op6.matrix[np.ix_(idx, idx)]
    assert np.max(np.abs(sub - op4.matrix)) < 1e-12


def test_quadrature_refinement_is_inert(basis_small):
    base = assemble_collision(basis_small, use_cache=False).matrix
    fine = assemble_collision(
        basis_small, use_cache=False,
        quad=CollisionQuadrature(n_gauss=9, n_radial=6, n_polar=8, n_azimuth=18)).matrix
    assert np.max(np.abs(base - fine)) < 1e-12


def test_collision_measure_preserves_velocity_law(basis_mid):
    # eta and sigma rules deliberately different, so agreement is not structural
    grid = _CollisionGrid(
        CollisionQuadrature.for_degree(2 * basis_mid.max_degree), 1.0, 1.0,
        sigma_quad=CollisionQuadrature(n_gauss=5, n_radial=3, n_polar=7, n_azimuth=12))
    pre = one_point_integrals(basis_mid, grid, "v")
    post = one_point_integrals(basis_mid, grid, "v_prime")
    assert np.max(np.abs(pre - post)) < 1e-11
    pre_s = one_point_integrals(basis_mid, grid, "v_star")
    post_s = one_point_integrals(basis_mid, grid, "v_prime_star")
    assert np.max(np.abs(pre - pre_s)) < 1e-11
    assert np.max(np.abs(post - post_s)) < 1e-11


def test_invalid_kernel_parameters():
    with pytest.raises(AssemblyError):
        _CollisionGrid(CollisionQuadrature.for_degree(4), -0.5, 1.0)
    with pytest.raises(AssemblyError):
        _CollisionGrid(CollisionQuadrature.for_degree(4), 1.5, 1.0)
    with pytest.raises(AssemblyError):
        _CollisionGrid(CollisionQuadrature.for_degree(4), 1.0, 0.0)


@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=10, max_size=10))
def test_quadratic_form_nonpositive(c):
    op = assemble_collision(build_basis(2, 8))
    f = np.array(c)
    assert f @ (op.matrix @ f) <= 1e-10 * max(1.0, float(f @ f))


def test_cache_roundtrip(tmp_path, basis_small, monkeypatch):
    monkeypatch.setenv("VPB_SPECTRAL_CACHE", str(tmp_path))
    first = assemble_collision(basis_small, gamma=0.5)
    files = list(tmp_path.glob("L-*.vpbc"))
    assert len(files) == 1
    header, stored = read_matrix(files[0])
    assert header["params"]["gamma"] == 0.5
    assert np.array_equal(stored, first.matrix)
    again = assemble_collision(basis_small, gamma=0.5)
    assert np.array_equal(again.matrix, first.matrix)


def test_micro_solve(basis_small):
    op = synthetic_collision(basis_small, nu_bar=2.0)
    rhs = basis_small.micro_project(np.arange(basis_small.dim, dtype=float))
    x = op.micro_solve(rhs)
    assert np.allclose(op.matrix @ x, rhs)
    assert np.allclose(x, -rhs / 2.0)
    with pytest.raises(AssemblyError):
        op.micro_solve(basis_small.chi(0))


def test_synthetic_backend(basis_small):
    op = synthetic_collision(basis_small, nu_bar=1.5)
    assert op.spectral_gap() == pytest.approx(1.5)
    for k in range(5):
        assert np.linalg.norm(op.matrix @ basis_small.chi(k)) == 0.0
    with pytest.raises(BackendError):
        op.gamma_form()
    with pytest.raises(AssemblyError):
        synthetic_collision(basis_small, nu_bar=0.0)


@pytest.fixture(scope="module")
def gamma_setup(basis_mid):
    op = assemble_collision(basis_mid)
    return basis_mid, op, op.gamma_form()


class TestGammaForm:
    def test_ties_to_collision_matrix(self, gamma_setup):
        basis, op, ge = gamma_setup
        rng = np.random.default_rng(11)
        f = rng.standard_normal(basis.dim)
        chi0 = basis.chi(0)
        res = ge.form_many([(f, chi0), (chi0, f)])
        assert np.max(np.abs(res[0] + res[1] - op.matrix @ f)) < 1e-11

    def test_output_is_microscopic(self, gamma_setup):
        basis, _, ge = gamma_setup
        rng = np.random.default_rng(12)
        out = ge.form(rng.standard_normal(basis.dim), rng.standard_normal(basis.dim))
        assert max(abs(out[i]) for i in basis.invariant_indices) < 1e-11

    def test_symmetric_and_bilinear(self, gamma_setup):
        basis, _, ge = gamma_setup
        rng = np.random.default_rng(13)
        f, g, h = rng.standard_normal((3, basis.dim))
        fg, gf, fh, combo = ge.form_many([(f, g), (g, f), (f, h), (f, 2.0 * g - 3.0 * h)])
        assert np.allclose(fg, gf, atol=1e-11)
        assert np.allclose(combo, 2.0 * fg - 3.0 * fh, atol=1e-10)
        z = ge.form(f + 1j * g, h)
        assert np.allclose(z, fh + 1j * ge.form(g, h), atol=1e-10)

    def test_momentum_pair_identity(self, gamma_setup):
        # product of two momentum modes relaxes through the microscopic part
        # of the velocity dyad: Gamma(v_i X0, v_j X0) = -L micro(v_i v_j X0)/2
        basis, op, ge = gamma_setup
        v_mats = multiplication_matrices(basis)
        chi0 = basis.chi(0)
        pairs, expected = [], []
        for i in range(3):
            for j in range(i, 3):
                pairs.append((v_mats[i] @ chi0, v_mats[j] @ chi0))
                expected.append(-0.5 * (op.matrix @ basis.micro_project(v_mats[i] @ (v_mats[j] @ chi0))))
        got = ge.form_many(pairs)
        assert np.max(np.abs(got - np.array(expected))) < 1e-11

    def test_evaluator_is_cached(self, gamma_setup):
        _, op, ge = gamma_setup
        assert op.gamma_form() is ge
