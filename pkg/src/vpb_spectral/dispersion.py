"""Dispersion determinants and the five hydrodynamic eigenvalue branches.

Eliminating the microscopic part of the eigenvalue problem at wavenumber
s = |xi| leaves scalar conditions on the macroscopic components: a scalar
determinant for the doubly degenerate shear family (solve_D0) and a 3x3
determinant coupling density, longitudinal momentum and temperature
(solve_D1, with the electrostatic term entering through the 1/s factor).
Roots are tracked from their analytic eps -> 0 seeds, converted into
eigenpairs of the full mode operator, and cross-validated against dense
spectra.  Everything is computed on the axis xi = s e1 and pushed forward
by a velocity rotation for general directions.

Scaling conventions: the shear root variable equals the eigenvalue itself,
lam_{2,3} = z(eps*s); the coupled-family roots are rescaled, lam_j = eps*z_j
for j in {-1, 0, 1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .collision import CollisionOperator
from .errors import AssemblyError, RegimeError
from .mode_operator import (
    FourierMode,
    _v_matrices,
    pushforward_from_axis,
    rotation_to_axis,
)
from .transport import TransportCoefficients, branch_decay, branch_frequency
from .velocity_space import VelocityBasis

R0_DEFAULT = 0.3  # admissible eps*|xi| ball for the five-branch construction
R1_DEFAULT = 0.1  # root basin radius (scaled by |s| for the coupled family)

_SOLVE_TOL = 1e-8  # relative residual allowed in a micro-space resolvent solve

FLUX_INDICES = (1, 2, 4)


@dataclass(frozen=True, eq=False)
class BranchPoint:
    """One labeled point of a hydrodynamic branch, with its eigenpair."""

    branch: int
    s: float
    eps: float
    lam: complex
    z: complex
    psi: np.ndarray
    det_residual: float
    eig_residual: float


@dataclass(frozen=True, eq=False)
class AsymptoticCoefficients:
    """Closed-form leading frequencies, decay rates and limit vectors at one xi."""

    s: float
    direction: np.ndarray
    eta: dict
    b: dict
    h: dict
    g: dict


class _MicroBlocks:
    """Collision and streaming matrices restricted to the micro subspace."""

    def __init__(self, op: CollisionOperator):
        basis = op.basis
        inv = set(basis.invariant_indices)
        self.micro = np.array([i for i in range(basis.dim) if i not in inv])
        self.L = op.matrix[np.ix_(self.micro, self.micro)]
        v1 = _v_matrices(basis)[0]
        self.V = v1[np.ix_(self.micro, self.micro)]
        flux = {}
        for j in (1, 2, 3, 4):
            full = basis.micro_project(v1 @ basis.chi(j))
            flux[j] = full[self.micro]
        self.flux = flux
        self.dim = basis.dim
        self.kappa_bar: float | None = None

    def embed(self, micro_vec: np.ndarray) -> np.ndarray:
        out = np.zeros(self.dim, dtype=complex)
        out[self.micro] = micro_vec
        return out


def _kappa_bar(op: CollisionOperator) -> float:
    """Largest diagonal resolvent entry at the origin: the transport-coefficient
    scale of this backend, which sets how far the coupled roots can drift."""
    blocks = _blocks(op)
    if blocks.kappa_bar is None:
        vals, _ = _entries(op, 0.0, 0.0)
        blocks.kappa_bar = max(abs(vals[(j, j)]) for j in FLUX_INDICES)
    return blocks.kappa_bar


_BLOCK_CACHE: dict[str, _MicroBlocks] = {}


def _blocks(op: CollisionOperator) -> _MicroBlocks:
    key = repr(sorted(op.descriptor().items(), key=lambda kv: kv[0]))
    if key not in _BLOCK_CACHE:
        _BLOCK_CACHE[key] = _MicroBlocks(op)
    return _BLOCK_CACHE[key]


class _Resolvent:
    """LU-factored (L - beta - i y V1) on the micro block, with a residual guard."""

    def __init__(self, blocks: _MicroBlocks, beta: complex, y: float):
        a = blocks.L.astype(complex) - 1j * y * blocks.V
        a[np.diag_indices_from(a)] -= beta
        self.a = a
        self.lu = scipy.linalg.lu_factor(a)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = scipy.linalg.lu_solve(self.lu, rhs)
        scale = np.linalg.norm(rhs)
        if scale > 0:
            resid = np.linalg.norm(self.a @ x - rhs) / scale
            if not np.isfinite(resid) or resid > _SOLVE_TOL:
                raise RegimeError(f"micro resolvent solve residual {resid:.2e}; "
                                  "parameter too close to the essential spectrum")
        return x


def _entries(op: CollisionOperator, beta: complex, y: float,
             derivative: bool = False) -> tuple[dict, dict | None]:
    """R_(jk) values (and optionally d/dbeta) at one (beta, y) point.

    d/dbeta of the resolvent is its square, so derivative entries cost one
    extra triangular solve each through the same factorization.
    """
    blocks = _blocks(op)
    res = _Resolvent(blocks, beta, y)
    sols = {j: res.solve(blocks.flux[j]) for j in FLUX_INDICES}
    vals = {(j, k): complex(sols[j] @ blocks.flux[k])
            for j in FLUX_INDICES for k in FLUX_INDICES}
    ders = None
    if derivative:
        sols2 = {j: res.solve(sols[j]) for j in FLUX_INDICES}
        ders = {(j, k): complex(sols2[j] @ blocks.flux[k])
                for j in FLUX_INDICES for k in FLUX_INDICES}
    return vals, ders


def resolvent_entry(op: CollisionOperator, j: int, k: int,
                    beta: complex, s: float) -> complex:
    """Micro-resolvent matrix element between flux vectors j and k."""
    if j not in FLUX_INDICES or k not in FLUX_INDICES:
        raise ValueError(f"resolvent entries are defined for indices {FLUX_INDICES}")
    return _entries(op, beta, s)[0][(j, k)]


def _require_regime(w: float, r0: float) -> None:
    if abs(w) > r0:
        raise RegimeError(f"eps*|xi| = {abs(w):.3f} outside the hydrodynamic ball "
                          f"(r0 = {r0}); branch construction not valid there")


def _eval_shear_det(op: CollisionOperator, z: complex, w: float,
                    derivative: bool = False) -> tuple[complex, complex | None]:
    vals, ders = _entries(op, z, w, derivative)
    val = z - w * w * vals[(2, 2)]
    der = None if ders is None else 1.0 - w * w * ders[(2, 2)]
    return val, der


def _eval_coupled_det(op: CollisionOperator, z: complex, s: float, eps: float,
                      derivative: bool = False) -> tuple[complex, complex | None]:
    """Cubic determinant of the density/momentum/temperature block."""
    vals, ders = _entries(op, eps * z, eps * s, derivative)
    r11, r44 = vals[(1, 1)], vals[(4, 4)]
    r14, r41 = vals[(1, 4)], vals[(4, 1)]
    s2 = s * s
    root23 = math.sqrt(2.0 / 3.0)
    lin = 1.0 + 5.0 / 3.0 * s2 + 1j * eps * root23 * s2 * s * (r41 + r14) \
        + eps * eps * s2 * s2 * (r44 * r11 - r14 * r41)
    val = z ** 3 - z * z * eps * s2 * (r11 + r44) + z * lin - eps * (s2 + s2 * s2) * r44
    if not derivative:
        return val, None
    d11, d44 = ders[(1, 1)], ders[(4, 4)]
    d14, d41 = ders[(1, 4)], ders[(4, 1)]
    # chain rule: the entries are evaluated at beta = eps*z
    dlin = 1j * eps * eps * root23 * s2 * s * (d41 + d14) \
        + eps ** 3 * s2 * s2 * (d44 * r11 + r44 * d11 - d14 * r41 - r14 * d41)
    der = 3.0 * z * z - 2.0 * z * eps * s2 * (r11 + r44) - z * z * eps * eps * s2 * (d11 + d44) \
        + lin + z * dlin - eps * eps * (s2 + s2 * s2) * d44
    return val, der


def solve_D0(op: CollisionOperator, s: float, eps: float,
             r0: float = R0_DEFAULT, r1: float = R1_DEFAULT,
             tol: float = 1e-13, max_iter: int = 60) -> complex:
    """Root of the shear determinant; equals the shear eigenvalue itself.

    Newton from 0 with a bracketing fallback on the real line; the root is
    real and even in s, and both properties are enforced on exit.
    """
    w = eps * s
    _require_regime(w, r0)
    if w == 0.0:
        return 0.0j
    z = 0.0j
    converged = False
    for _ in range(max_iter):
        val, der = _eval_shear_det(op, z, w, derivative=True)
        if not np.isfinite(val) or abs(der) < 1e-14:
            break
        step = val / der
        z = z - step
        if abs(z) > r1:
            break
        if abs(step) < tol:
            converged = True
            break
    if not converged or abs(_eval_shear_det(op, z, w)[0]) > 1e-10:
        z = complex(_bisect_shear(op, w, r1))
    if abs(z.imag) > 1e-10 * max(1.0, abs(z)):
        raise RegimeError(f"shear root drifted off the real axis: {z:.3e}")
    return complex(z.real)


def _bisect_shear(op: CollisionOperator, w: float, r1: float) -> float:
    def f(zr: float) -> float:
        return _eval_shear_det(op, complex(zr), w)[0].real

    hi, fhi = 0.0, f(0.0)
    lo = None
    for k in range(1, 41):
        cand = -r1 * k / 40.0
        if f(cand) * fhi < 0:
            lo = cand
            break
    if lo is None:
        raise RegimeError("no sign change for the shear determinant inside the basin")
    return scipy.optimize.brentq(f, lo, hi, xtol=1e-15, rtol=8.9e-16)


def solve_D1(op: CollisionOperator, s: float, eps: float,
             r0: float = R0_DEFAULT, r1: float = R1_DEFAULT,
             tol: float = 1e-13, max_iter: int = 60) -> dict:
    """The three coupled-family roots, keyed by branch index -1, 0, 1.

    Damped Newton from the analytic seeds; on failure, the literal
    contraction iterate from the existence proof, which has the correct
    basin by construction.  Root collision means the regime assumption
    failed, not that the solver did.
    """
    _require_regime(eps * s, r0)
    roots: dict[int, complex] = {}
    for j in (-1, 0, 1):
        eta = branch_frequency(j, s)
        if eps == 0.0:
            roots[j] = eta
            continue
        # the root sits within ~eps*b_j(s) <= C eps s^2 kappa of its seed, so
        # the certification radius must scale with the backend's coefficient
        # size or large-coefficient backends get rejected inside the ball
        basin = max(r1 * abs(s), 3.0 * eps * s * s * _kappa_bar(op), 1e-12)
        z = _newton_coupled(op, eta, s, eps, basin, tol, max_iter)
        if z is None:
            z = _contraction_coupled(op, eta, s, eps, tol)
        if z is None or abs(_eval_coupled_det(op, z, s, eps)[0]) > 1e-9:
            raise RegimeError(f"coupled-family root for branch {j} did not converge "
                              f"at (s, eps) = ({s:.3g}, {eps:.3g})")
        if abs(z - eta) > max(basin, 1e-9):
            raise RegimeError(f"branch {j} root left its basin: |z - seed| = "
                              f"{abs(z - eta):.3e} > {basin:.3e}")
        if j == 0 and abs(z.imag) > 1e-10 * max(1.0, abs(z)):
            raise RegimeError(f"thermal root drifted off the real axis: {z:.3e}")
        roots[j] = complex(z.real) if j == 0 else z
    vals = list(roots.values())
    for a in range(3):
        for b in range(a + 1, 3):
            if abs(vals[a] - vals[b]) < 1e-8 * max(1.0, abs(vals[a])):
                raise RegimeError("coupled-family roots collided; outside the regime")
    return roots


def _newton_coupled(op, eta, s, eps, basin, tol, max_iter):
    z = eta
    for _ in range(max_iter):
        val, der = _eval_coupled_det(op, z, s, eps, derivative=True)
        if not np.isfinite(val) or abs(der) < 1e-14:
            return None
        step = val / der
        t = 1.0
        while t > 1.0 / 64.0 and abs(z - t * step - eta) > 1.5 * basin:
            t *= 0.5
        z = z - t * step
        if abs(z - eta) > 2.0 * basin:
            return None
        if t * abs(step) < tol:
            return z
    return None


def _contraction_coupled(op, eta, s, eps, tol, max_iter: int = 400):
    denom = 3.0 * eta * eta + 1.0 + 5.0 / 3.0 * s * s
    z = eta
    for _ in range(max_iter):
        val = _eval_coupled_det(op, z, s, eps)[0]
        z_new = z - val / denom
        if not np.isfinite(z_new):
            return None
        if abs(z_new - z) < tol:
            return z_new
        z = z_new
    return None


def _axis_h_vectors(basis: VelocityBasis, s: float) -> dict:
    """Leading-order macroscopic limit vectors on the axis, orthonormal in
    the weighted pairing.  The acoustic velocity component carries sign -j,
    which is what the defining 5x5 drift eigenproblem forces."""
    den = math.sqrt(3.0 + 5.0 * s * s)
    h = {}
    a0 = math.sqrt(2.0) * s * s / (den * math.sqrt(1.0 + s * s))
    c0 = math.sqrt(3.0 + 3.0 * s * s) / den
    h[0] = a0 * basis.chi(0) - c0 * basis.chi(4)
    q = math.sqrt(1.5) * s / den
    u = s / den
    for j in (-1, 1):
        h[j] = q * basis.chi(0) - (j / math.sqrt(2.0)) * basis.chi(1) + u * basis.chi(4)
    h[2] = basis.chi(2)
    h[3] = basis.chi(3)
    return h


def asymptotic_coefficients(basis: VelocityBasis, xi,
                            coeffs: TransportCoefficients) -> AsymptoticCoefficients:
    """Frequencies eta_j, decay rates b_j and limit vectors h_j, g_j at xi.

    For off-axis xi the transverse pair uses the orthonormal frame
    perpendicular to xi delivered by the axis rotation; any frame choice
    spans the same degenerate subspace.
    """
    arr = np.atleast_1d(np.asarray(xi, dtype=float))
    if arr.size == 1:
        s = float(arr[0])
        direction = np.array([1.0, 0.0, 0.0])
    else:
        s = float(np.linalg.norm(arr))
        direction = arr / s
    eta = {j: branch_frequency(j, s) for j in (-1, 0, 1, 2, 3)}
    b = {j: branch_decay(j, s, coeffs) for j in (-1, 0, 1, 2, 3)}
    rot = rotation_to_axis(direction)
    chi_vec = [basis.chi(1), basis.chi(2), basis.chi(3)]

    def along(w3: np.ndarray) -> np.ndarray:
        return sum(w3[i] * chi_vec[i] for i in range(3))

    den = math.sqrt(3.0 + 5.0 * s * s)
    a0 = math.sqrt(2.0) * s * s / (den * math.sqrt(1.0 + s * s))
    c0 = math.sqrt(3.0 + 3.0 * s * s) / den
    h = {0: a0 * basis.chi(0) - c0 * basis.chi(4)}
    q = math.sqrt(1.5) * s / den
    u = s / den
    for j in (-1, 1):
        h[j] = q * basis.chi(0) - (j / math.sqrt(2.0)) * along(direction) + u * basis.chi(4)
    h[2] = along(rot[1])
    h[3] = along(rot[2])
    g = dict(h)
    g[0] = -h[0]
    return AsymptoticCoefficients(s=s, direction=direction, eta=eta, b=b, h=h, g=g)


def _axis_pair(basis: VelocityBasis, s: float, f: np.ndarray, g: np.ndarray) -> complex:
    i0 = basis.invariant_indices[0]
    return complex(f @ g + (f[i0] * g[i0]) / (s * s))


def _branch_eigenfunction(op: CollisionOperator, j: int, z: complex,
                          s: float, eps: float, h_axis: dict) -> np.ndarray:
    """Assemble, normalize and sign-align one axis eigenfunction."""
    basis = op.basis
    blocks = _blocks(op)
    if j in (2, 3):
        res = _Resolvent(blocks, z, eps * s)
        micro = res.solve(blocks.flux[j])
        psi = basis.chi(j).astype(complex) + 1j * eps * s * blocks.embed(micro)
    else:
        beta = eps * z
        vals, _ = _entries(op, beta, eps * s)
        root23 = math.sqrt(2.0 / 3.0)
        es2 = eps * s * s
        m = np.array([
            [z, 1j * s, 0.0],
            [1j * (s + 1.0 / s), z - es2 * vals[(1, 1)], 1j * s * root23 - es2 * vals[(4, 1)]],
            [0.0, 1j * s * root23 - es2 * vals[(1, 4)], z - es2 * vals[(4, 4)]],
        ], dtype=complex)
        _, sing, vh = np.linalg.svd(m)
        if sing[-1] > 1e-6 * sing[0]:
            raise AssemblyError(f"macro system at branch {j} is not singular: "
                                f"sigma_min/sigma_max = {sing[-1] / sing[0]:.2e}")
        a, b, c = np.conj(vh[-1])
        macro = a * basis.chi(0) + b * basis.chi(1) + c * basis.chi(4)
        v1 = _v_matrices(basis)[0]
        rhs_full = basis.micro_project(v1 @ macro)
        res = _Resolvent(blocks, beta, eps * s)
        micro = res.solve(rhs_full[blocks.micro])
        psi = macro + 1j * eps * s * blocks.embed(micro)
    pair = _axis_pair(basis, s, psi, psi)
    if abs(pair) < 1e-6:
        raise AssemblyError(f"branch {j} eigenfunction is nearly isotropic-null; "
                            "cannot normalize in the weighted pairing")
    psi = psi / np.sqrt(pair)
    if _axis_pair(basis, s, psi, h_axis[j]).real < 0:
        psi = -psi
    return psi


def hydrodynamic_spectrum(mode: FourierMode, r0: float = R0_DEFAULT,
                          r1: float = R1_DEFAULT) -> list[BranchPoint]:
    """The five labeled branch points of one mode, from the determinants.

    Labels come from continuation: each root is solved from its own
    analytic seed.  Eigenfunctions are built on the axis, sign-aligned
    against the limit vectors, then rotated to the actual direction.
    """
    op = mode.collision
    s, eps = mode.s, mode.eps
    _require_regime(eps * s, r0)
    basis = op.basis
    h_axis = _axis_h_vectors(basis, s)

    shear_z = solve_D0(op, s, eps, r0=r0, r1=r1)
    coupled = solve_D1(op, s, eps, r0=r0, r1=r1)

    on_axis = abs(mode.direction @ np.array([1.0, 0.0, 0.0]) - 1.0) < 1e-14
    push = None if on_axis else pushforward_from_axis(basis, mode.direction)

    points = []
    for j in (-1, 0, 1, 2, 3):
        if j in (2, 3):
            z = shear_z
            lam = complex(z)
            det_res = abs(_eval_shear_det(op, z, eps * s)[0])
        else:
            z = coupled[j]
            lam = eps * z
            det_res = abs(_eval_coupled_det(op, z, s, eps)[0])
        psi = _branch_eigenfunction(op, j, z, s, eps, h_axis)
        if push is not None:
            psi = push @ psi
        scale = mode.norm(psi)
        eig_res = mode.norm(mode.apply(psi) - lam * psi) / scale
        if eig_res > 1e-6:
            raise RegimeError(f"branch {j} eigenpair residual {eig_res:.2e}; "
                              "determinant root does not match the mode operator")
        points.append(BranchPoint(branch=j, s=s, eps=eps, lam=lam, z=complex(z),
                                  psi=psi, det_residual=det_res, eig_residual=eig_res))
    return points


def dense_comparison(mode: FourierMode, points: list[BranchPoint],
                     fraction: float = 0.3) -> dict:
    """Match branch points against the dense spectrum of the same matrix.

    Assignment is optimal (rectangular Hungarian); the report also carries
    the largest real part outside the strip, which must stay below the
    negative threshold for the splitting to make sense.
    """
    vals = mode.eigensystem()[0]
    gap = mode.collision.spectral_gap()
    keep = np.where(vals.real > -fraction * gap)[0]
    if keep.size != 5:
        raise RegimeError(f"{keep.size} dense eigenvalues in the strip, expected 5")
    strip = vals[keep]
    rest = np.delete(vals, keep)
    cost = np.abs(np.array([[p.lam for _ in strip] for p in points])
                  - strip[None, :])
    rows, cols = scipy.optimize.linear_sum_assignment(cost)
    per_branch = {points[r].branch: float(cost[r, c]) for r, c in zip(rows, cols)}
    return {
        "per_branch": per_branch,
        "max_mismatch": max(per_branch.values()),
        "max_other_real": float(rest.real.max()) if rest.size else -math.inf,
    }


def fd_branch_derivatives(op: CollisionOperator, s: float,
                          h: float = 1e-3) -> dict:
    """Finite-difference checks of the leading asymptotic derivatives.

    Returns the curvature of the shear root at zero wavenumber (expected
    -2*kappa0) and the eps-derivative of each coupled root at eps = 0
    (expected -b_j(s)), Richardson-extrapolated central differences.
    """
    def shear_root(w: float) -> float:
        return solve_D0(op, w, 1.0).real

    # five-point second derivative; the root function is even with f(0) = 0
    curv = (32.0 * shear_root(h) - 2.0 * shear_root(2.0 * h)) / (12.0 * h * h)

    hs = h * max(s, 1e-6)

    def coupled_slope(j: int, step: float) -> complex:
        zp = solve_D1(op, s, step)[j]
        zm = solve_D1(op, s, -step)[j]
        return (zp - zm) / (2.0 * step)

    slopes = {}
    for j in (-1, 0, 1):
        d1 = coupled_slope(j, hs)
        d2 = coupled_slope(j, 0.5 * hs)
        slopes[j] = (4.0 * d2 - d1) / 3.0
    return {"shear_curvature": curv, "eps_slope": slopes}


def eigenfunction_expansion_check(op: CollisionOperator, bp: BranchPoint,
                                  levels: int = 4) -> dict:
    """Convergence of one branch eigenfunction to its limit expansion.

    Halves eps from the anchor point and measures, in the weighted norm,
    the distance of the macro part from the limit vector (first order) and
    of the micro part from its explicit leading term (second order); also
    tracks the quadratic normalization of the macro coefficients.
    """
    from .mode_operator import mode_operator

    basis = op.basis
    s, j = bp.s, bp.branch
    h_axis = _axis_h_vectors(basis, s)
    v1 = _v_matrices(basis)[0]
    lead_micro = op.micro_solve(basis.micro_project(v1 @ h_axis[j].astype(float)))
    i0, i1, i4 = (basis.invariant_indices[0], basis.invariant_indices[1],
                  basis.invariant_indices[4])

    eps_levels, macro_res, micro_res, quad_norms = [], [], [], []
    for k in range(levels):
        eps_k = bp.eps / 2.0 ** k
        mode = mode_operator(op, eps_k, np.array([s, 0.0, 0.0]))
        point = next(p for p in hydrodynamic_spectrum(mode) if p.branch == j)
        psi = point.psi
        macro = basis.macro_project(psi)
        micro = psi - macro
        macro_res.append(mode.norm(macro - h_axis[j]))
        micro_res.append(mode.norm(micro - 1j * eps_k * s * lead_micro))
        if j in (-1, 0, 1):
            a, b, c = psi[i0], psi[i1], psi[i4]
            quad = a * a * (1.0 + 1.0 / (s * s)) + b * b + c * c
        else:
            quad = psi[basis.invariant_indices[j]] ** 2
        quad_norms.append(complex(quad))
        eps_levels.append(eps_k)

    def fitted_slope(res: list[float]) -> float:
        xs = np.log(eps_levels)
        ys = np.log(np.maximum(res, 1e-300))
        return float(np.polyfit(xs, ys, 1)[0])

    return {
        "branch": j,
        "s": s,
        "eps_levels": eps_levels,
        "macro_residuals": macro_res,
        "micro_residuals": micro_res,
        "macro_slope": fitted_slope(macro_res),
        "micro_slope": fitted_slope(micro_res),
        "quad_norms": quad_norms,
    }
