"""Per-Fourier-mode linearized operator with electrostatic coupling.

For wavevector xi with s = |xi| the mode matrix is

    B = L - i eps s V_dir (I + s^{-2} e0 e0^T),

where V_dir is multiplication by v . dir and e0 marks the density component;
the rank-one term is the self-consistent field through the Poisson equation.
The time evolution of the mode is df/dt = eps^{-2} B f.

The natural geometry is the wavenumber-weighted metric: the streaming plus
field part is skew-adjoint there, so the numerical range of B in that metric
is exactly the (nonpositive) collision form.  All of this is axis-reducible:
a velocity rotation intertwines the operator at xi with the one at s e1.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .collision import CollisionOperator
from .errors import BasisError, RegimeError
from .velocity_space import (
    VelocityBasis,
    bilinear_pair,
    multiplication_matrices,
    weighted_inner,
)

_V_CACHE: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _v_matrices(basis: VelocityBasis):
    key = basis.descriptor_hash()
    if key not in _V_CACHE:
        _V_CACHE[key] = multiplication_matrices(basis)
    return _V_CACHE[key]


def _normalize_xi(xi) -> tuple[float, np.ndarray]:
    arr = np.atleast_1d(np.asarray(xi, dtype=float))
    if arr.size == 1:
        s = float(arr[0])
        direction = np.array([1.0, 0.0, 0.0])
    elif arr.shape == (3,):
        s = float(np.linalg.norm(arr))
        direction = arr / s if s > 0 else arr
    else:
        raise BasisError("wavevector must be a scalar magnitude or a 3-vector")
    if s <= 0:
        raise BasisError("wavevector must be nonzero; the zero mode has no Poisson factor")
    return s, direction


@dataclass(frozen=True)
class FourierMode:
    """The linearized operator restricted to one spatial frequency."""

    collision: CollisionOperator
    eps: float
    xi: np.ndarray
    s: float
    direction: np.ndarray
    matrix: np.ndarray

    @property
    def basis(self) -> VelocityBasis:
        return self.collision.basis

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ f

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        return weighted_inner(self.basis, f, g, self.s)

    def pair(self, f: np.ndarray, g: np.ndarray) -> complex:
        return bilinear_pair(self.basis, f, g, self.s)

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(np.real(self.inner(f, f))))

    @cached_property
    def metric(self) -> np.ndarray:
        g = np.eye(self.basis.dim)
        i0 = self.basis.density_index
        g[i0, i0] += self.s ** -2
        return g

    def dissipation(self, f: np.ndarray) -> float:
        """Re (B f, f) in the mode metric; equals the collision form exactly."""
        return float(np.real(self.inner(self.matrix @ f, f)))

    def eigensystem(self) -> tuple[np.ndarray, np.ndarray]:
        return scipy.linalg.eig(self.matrix)

    def strip_eigensystem(self, fraction: float = 0.3):
        """Eigenpairs with Re above -fraction * gap: the hydrodynamic cluster.

        Raises RegimeError unless exactly five eigenvalues sit in the strip,
        which is the operational definition of being inside the regime.
        """
        if not 0.0 < fraction < 1.0:
            raise BasisError("strip fraction must lie in (0, 1)")
        gap = self.collision.spectral_gap()
        vals, vecs = self.eigensystem()
        keep = np.where(vals.real > -fraction * gap)[0]
        if keep.size != 5:
            raise RegimeError(
                f"{keep.size} eigenvalues above -{fraction:.2f}*gap at eps*s="
                f"{self.eps * self.s:.4g}; mode outside the hydrodynamic regime")
        order = np.argsort(-vals[keep].real)
        keep = keep[order]
        return vals[keep], vecs[:, keep]

    def spectral_projector(self, vectors: np.ndarray) -> np.ndarray:
        """Projector onto span(vectors) along the complementary invariant subspace.

        Built from the conjugation-free pairing, under which eigenvectors of
        distinct eigenvalues are orthogonal; degenerate blocks are handled by
        inverting the pairing Gram matrix.
        """
        gram = vectors.T @ (self.metric @ vectors)
        dual = np.linalg.solve(gram.T, (self.metric @ vectors).T)
        return vectors @ dual

    def descriptor(self) -> dict:
        return {
            "collision": self.collision.descriptor(),
            "eps": self.eps,
            "xi": [float(x) for x in self.xi],
        }


def mode_operator(collision: CollisionOperator, eps: float, xi) -> FourierMode:
    if not 0.0 < eps < 1.0:
        raise RegimeError(f"scaling parameter eps={eps} outside (0, 1)")
    s, direction = _normalize_xi(xi)
    basis = collision.basis
    v_mats = _v_matrices(basis)
    v_dir = sum(d * v for d, v in zip(direction, v_mats))
    i0 = basis.density_index
    coupling = np.zeros((basis.dim, basis.dim))
    coupling[:, i0] = v_dir[:, i0] / s ** 2
    mat = collision.matrix - 1j * eps * s * (v_dir + coupling)
    mat.setflags(write=False)
    return FourierMode(collision=collision, eps=eps, xi=s * direction, s=s,
                       direction=direction, matrix=mat)


def rotation_to_axis(direction: np.ndarray) -> np.ndarray:
    """Proper rotation O with O @ direction = e1; the identity at e1 itself,
    so axis quantities and their rotated images share one transverse frame."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    e1 = np.array([1.0, 0.0, 0.0])
    pre = np.eye(3)
    if d[0] < 0.0:
        pre = np.diag([-1.0, -1.0, 1.0])  # half-turn about e3, det stays +1
        d = pre @ d
    u = d + e1
    o = np.eye(3) + 2.0 * np.outer(e1, d) - np.outer(u, u) / (1.0 + d[0])
    return o @ pre


def compose_rotation(basis: VelocityBasis, rot: np.ndarray) -> np.ndarray:
    """Matrix of f -> f(rot . v) on basis coefficients; orthogonal, exact.

    The quadrature sees products of two degree-N polynomials, so the rule the
    basis carries is already exact for these integrals.
    """
    from .collision import _poly_values

    rotated = _poly_values(basis, basis.quad_nodes @ rot.T)
    return basis.node_poly.T @ (basis.gauss_weights[:, None] * rotated)


def pushforward_from_axis(basis: VelocityBasis, direction: np.ndarray) -> np.ndarray:
    """Coefficient map sending an axis-mode solution to the mode along direction.

    If g solves the problem at s e1 then g(O v) solves it at s * direction,
    O the rotation aligning direction with e1.
    """
    return compose_rotation(basis, rotation_to_axis(direction))
