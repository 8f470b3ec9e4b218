"""Velocity-space discretization.

The perturbation unknown lives in L^2(R^3) with a square-root Maxwellian
weight: every function is p(v) * sqrt(M), M the standard Gaussian.  The basis
is the tensor product of normalized probabilists' Hermite functions, truncated
at a total degree, with one orthogonal rotation applied inside the degree-2
block so that the energy invariant (|v|^2 - 3) sqrt(M) / sqrt(6) is itself a
basis element.  All inner products of basis functions are then computed
exactly by a folded Gauss-Hermite product rule.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_hermitenorm

from .errors import BasisError

_TWO_PI = 2.0 * np.pi


def _multi_indices(max_degree: int) -> list[tuple[int, int, int]]:
    """Graded lexicographic multi-indices with total degree <= max_degree."""
    out = []
    for deg in range(max_degree + 1):
        block = []
        for a1 in range(deg + 1):
            for a2 in range(deg - a1 + 1):
                block.append((a1, a2, deg - a1 - a2))
        block.sort()
        out.extend(block)
    return out


def hermite_polynomial_table(nmax: int, x: np.ndarray) -> np.ndarray:
    """Values of He_n(x)/sqrt(n!) for n = 0..nmax, shape (nmax+1, len(x)).

    Three-term recurrence in the normalized form, stable at quadrature nodes.
    """
    x = np.asarray(x, dtype=float)
    table = np.empty((nmax + 1, x.size), dtype=float)
    table[0] = 1.0
    if nmax >= 1:
        table[1] = x
    for n in range(1, nmax):
        table[n + 1] = (x * table[n] - np.sqrt(n) * table[n - 1]) / np.sqrt(n + 1)
    return table


def _energy_rotation(indices: list[tuple[int, int, int]]) -> np.ndarray:
    """Orthogonal change of basis making the energy invariant a basis column.

    Identity except on the three pure-square degree-2 slots.  The sum
    (He2(v1)+He2(v2)+He2(v3))/sqrt(3) lands on the slot of (2,0,0).
    """
    dim = len(indices)
    rot = np.eye(dim)
    i002 = indices.index((0, 0, 2))
    i020 = indices.index((0, 2, 0))
    i200 = indices.index((2, 0, 0))
    rot[:, [i002, i020, i200]] = 0.0
    rot[i002, i002] = 1.0 / np.sqrt(2.0)
    rot[i020, i002] = -1.0 / np.sqrt(2.0)
    rot[i002, i020] = 1.0 / np.sqrt(6.0)
    rot[i020, i020] = 1.0 / np.sqrt(6.0)
    rot[i200, i020] = -2.0 / np.sqrt(6.0)
    rot[i002, i200] = 1.0 / np.sqrt(3.0)
    rot[i020, i200] = 1.0 / np.sqrt(3.0)
    rot[i200, i200] = 1.0 / np.sqrt(3.0)
    return rot


@dataclass(frozen=True)
class VelocityBasis:
    """Orthonormal truncated Hermite basis with its exact quadrature."""

    max_degree: int
    quad_order: int
    dim: int
    multi_indices: tuple[tuple[int, int, int], ...]
    quad_nodes: np.ndarray        # (nq, 3)
    quad_weights: np.ndarray      # (nq,) folded: sum w f(v) g(v) = (f, g)
    gauss_weights: np.ndarray     # (nq,) weights for the N(0, I3) measure
    node_poly: np.ndarray         # (nq, dim) polynomial parts at the nodes
    invariant_indices: tuple[int, int, int, int, int]
    rotation: np.ndarray          # (dim, dim) raw-tensor -> final basis
    tol_quad: float

    def descriptor(self) -> dict:
        return {
            "schema": 1,
            "max_degree": self.max_degree,
            "quad_order": self.quad_order,
            "index_order": "graded-lex-ascending",
            "energy_rotation": "pure-squares-v1",
        }

    def descriptor_hash(self) -> str:
        payload = json.dumps(self.descriptor(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def chi(self, k: int) -> np.ndarray:
        """Coefficient vector of the k-th collision invariant, k = 0..4."""
        e = np.zeros(self.dim)
        e[self.invariant_indices[k]] = 1.0
        return e

    @property
    def density_index(self) -> int:
        return self.invariant_indices[0]

    def macro_project(self, f: np.ndarray) -> np.ndarray:
        """Projection onto the five collision invariants (coefficient space)."""
        out = np.zeros_like(f)
        idx = list(self.invariant_indices)
        out[..., idx] = f[..., idx]
        return out

    def micro_project(self, f: np.ndarray) -> np.ndarray:
        out = np.array(f, copy=True)
        out[..., list(self.invariant_indices)] = 0.0
        return out

    def density_project(self, f: np.ndarray) -> np.ndarray:
        out = np.zeros_like(f)
        out[..., self.density_index] = f[..., self.density_index]
        return out


@dataclass
class MacroState:
    """Macroscopic content of a perturbation: density, momentum, energy."""

    n: complex
    m: np.ndarray
    q: complex
    phi_factor: complex | None = None  # n / |xi|^2, the Poisson coupling factor

    def as_tuple(self) -> tuple:
        return (self.n, tuple(self.m), self.q)


def build_basis(max_degree: int, quad_order: int | None = None,
                tol_quad: float = 1e-10) -> VelocityBasis:
    """Construct the truncated Hermite basis and its folded quadrature.

    quad_order counts Gauss-Hermite nodes per axis; the default 2*max_degree+4
    leaves margin beyond the max_degree+2 minimum needed for an exact Gram
    matrix.  Construction fails if the quadrature is degenerate or the Gram
    check misses tol_quad.
    """
    if max_degree < 2:
        raise BasisError("max_degree must be >= 2 so all five invariants are in the span")
    if quad_order is None:
        quad_order = 2 * max_degree + 4
    if quad_order < max_degree + 2:
        raise BasisError(
            f"quad_order {quad_order} too small for max_degree {max_degree}; need >= {max_degree + 2}")

    indices = _multi_indices(max_degree)
    dim = len(indices)

    x, w = roots_hermitenorm(quad_order)
    if not np.all(w > 0) or not np.all(np.isfinite(x)):
        raise BasisError("degenerate 1-d quadrature rule (non-positive weight)")
    w = w / np.sqrt(_TWO_PI)  # weights for the standard normal measure

    nodes = np.stack([g.ravel() for g in np.meshgrid(x, x, x, indexing="ij")], axis=-1)
    gauss_w = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()

    table = hermite_polynomial_table(max_degree, x)
    alpha = np.array(indices)
    # polynomial part of each basis function at each tensor node
    ia, ib, ic = np.meshgrid(np.arange(quad_order), np.arange(quad_order),
                             np.arange(quad_order), indexing="ij")
    ia, ib, ic = ia.ravel(), ib.ravel(), ic.ravel()
    node_poly = (table[alpha[:, 0]][:, ia]
                 * table[alpha[:, 1]][:, ib]
                 * table[alpha[:, 2]][:, ic]).T  # (nq, dim)

    rot = _energy_rotation(indices)
    node_poly = node_poly @ rot

    maxwell = (_TWO_PI) ** (-1.5) * np.exp(-0.5 * np.sum(nodes ** 2, axis=1))
    folded_w = gauss_w / maxwell

    inv = (indices.index((0, 0, 0)),
           indices.index((1, 0, 0)),
           indices.index((0, 1, 0)),
           indices.index((0, 0, 1)),
           indices.index((2, 0, 0)))

    basis = VelocityBasis(
        max_degree=max_degree,
        quad_order=quad_order,
        dim=dim,
        multi_indices=tuple(indices),
        quad_nodes=nodes,
        quad_weights=folded_w,
        gauss_weights=gauss_w,
        node_poly=node_poly,
        invariant_indices=inv,
        rotation=rot,
        tol_quad=tol_quad,
    )
    gram = node_poly.T @ (gauss_w[:, None] * node_poly)
    err = np.max(np.abs(gram - np.eye(dim)))
    if err > tol_quad:
        raise BasisError(f"quadrature Gram check failed: max deviation {err:.3e} > {tol_quad:.1e}")
    for arr in (basis.quad_nodes, basis.quad_weights, basis.gauss_weights,
                basis.node_poly, basis.rotation):
        arr.setflags(write=False)
    return basis


def evaluate(basis: VelocityBasis, coeffs: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Pointwise values of the represented function, sqrt-Maxwellian included."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tables = [hermite_polynomial_table(basis.max_degree, points[:, k]) for k in range(3)]
    alpha = np.array(basis.multi_indices)
    poly = (tables[0][alpha[:, 0]] * tables[1][alpha[:, 1]] * tables[2][alpha[:, 2]]).T
    poly = poly @ basis.rotation
    sqrt_m = (_TWO_PI) ** (-0.75) * np.exp(-0.25 * np.sum(points ** 2, axis=1))
    return (poly @ np.asarray(coeffs)) * sqrt_m


def coeffs_from_callable(basis: VelocityBasis, fn) -> np.ndarray:
    """Galerkin coefficients of a pointwise function v -> f(v) (f carries sqrt(M))."""
    vals = fn(basis.quad_nodes)
    return basis.node_poly.T @ (basis.quad_weights * vals
                                * np.exp(-0.25 * np.sum(basis.quad_nodes ** 2, axis=1))
                                * (_TWO_PI) ** (-0.75))


def project_macro(basis: VelocityBasis, f: np.ndarray,
                  xi_norm: float | None = None) -> MacroState:
    """Extract (n, m, q) and, when a wavenumber is given, the Poisson factor."""
    i0, i1, i2, i3, i4 = basis.invariant_indices
    n = f[i0]
    m = np.array([f[i1], f[i2], f[i3]])
    q = f[i4]
    phi = None
    if xi_norm is not None:
        if xi_norm <= 0:
            raise BasisError("xi_norm must be positive for the Poisson factor")
        phi = n / xi_norm ** 2
    return MacroState(n=n, m=m, q=q, phi_factor=phi)


def macro_vector(basis: VelocityBasis, n: complex, m, q: complex) -> np.ndarray:
    """Coefficient vector of n*chi0 + m.v chi0 + q*chi4."""
    dtype = complex if np.iscomplexobj(np.asarray([n, q])) or np.iscomplexobj(np.asarray(m)) \
        else float
    f = np.zeros(basis.dim, dtype=dtype)
    i0, i1, i2, i3, i4 = basis.invariant_indices
    f[i0] = n
    f[i1], f[i2], f[i3] = np.asarray(m)
    f[i4] = q
    return f


def weighted_inner(basis: VelocityBasis, f: np.ndarray, g: np.ndarray,
                   xi_norm: float) -> complex:
    """Sesquilinear wavenumber-weighted inner product.

    Adds |xi|^{-2} times the product of density components to the plain L^2
    pairing; this is the quadratic form whose real part the mode operator
    dissipates.  Conjugation sits on the second slot.
    """
    if xi_norm == 0:
        raise BasisError("weighted inner product undefined at xi = 0")
    f = np.asarray(f)
    g = np.asarray(g)
    i0 = basis.density_index
    return complex(np.sum(f * np.conj(g)) + (f[i0] * np.conj(g[i0])) / xi_norm ** 2)


def bilinear_pair(basis: VelocityBasis, f: np.ndarray, g: np.ndarray,
                  xi_norm: float) -> complex:
    """Bilinear (conjugation-free) version of the weighted pairing.

    This is the pairing that diagonalizes the non-self-adjoint mode operator:
    eigenfunctions for distinct eigenvalues are orthogonal under it.
    """
    if xi_norm == 0:
        raise BasisError("weighted pairing undefined at xi = 0")
    f = np.asarray(f)
    g = np.asarray(g)
    i0 = basis.density_index
    return complex(np.sum(f * g) + (f[i0] * g[i0]) / xi_norm ** 2)


def weighted_norm(basis: VelocityBasis, f: np.ndarray, xi_norm: float) -> float:
    return float(np.sqrt(np.real(weighted_inner(basis, f, f, xi_norm))))


def multiplication_matrices(basis: VelocityBasis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Galerkin matrices of multiplication by v_1, v_2, v_3.

    Exact within the truncation: v_k couples Hermite degrees n -> n +/- 1 with
    coefficients sqrt(n+1), sqrt(n); components leaving the truncated span are
    dropped (the Galerkin cutoff).
    """
    dim = basis.dim
    pos = {alpha: i for i, alpha in enumerate(basis.multi_indices)}
    mats = []
    for k in range(3):
        v = np.zeros((dim, dim))
        for i, alpha in enumerate(basis.multi_indices):
            a = alpha[k]
            up = list(alpha)
            up[k] += 1
            ju = pos.get(tuple(up))
            if ju is not None:
                v[ju, i] = np.sqrt(a + 1.0)
            if a > 0:
                dn = list(alpha)
                dn[k] -= 1
                v[pos[tuple(dn)], i] = np.sqrt(a)
        mats.append(basis.rotation.T @ v @ basis.rotation)
    return tuple(mats)
