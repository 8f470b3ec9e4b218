"""Propagation of kinetic Fourier modes and their fluid counterparts.

One module covers the whole time side of the theory: the kinetic flow
e^{(t/eps^2) B} per mode (dense eigendecomposition with a stiff ODE oracle),
its splitting into the five-branch hydrodynamic part and an exponentially
small remainder, the fluid semigroup on the three non-oscillatory branches,
the forced fluid mode equations solved by exact Duhamel integration of
piecewise-linear forcing, and least-squares decay-rate fitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.integrate

from .collision import CollisionOperator
from .dispersion import R0_DEFAULT, BranchPoint, asymptotic_coefficients, \
    hydrodynamic_spectrum
from .errors import DataError, FitError, RegimeError
from .mode_operator import FourierMode
from .transport import TransportCoefficients, branch_decay
from .velocity_space import MacroState, VelocityBasis, bilinear_pair, \
    macro_vector, weighted_inner

ODE_RTOL = 1e-10
ODE_ATOL = 1e-12
COND_LIMIT = 1e12


@dataclass
class ModeTrajectory:
    """Time samples of one Fourier mode, kinetic or fluid.

    norm_track carries the weighted norm at each time; for the unforced
    kinetic flow it must be non-increasing (the flow is a contraction).
    oracle_gap is the largest weighted distance between the primary states
    and the independent ODE integration, when that oracle was run.
    """

    xi: np.ndarray
    eps: float
    times: np.ndarray
    states: np.ndarray
    norm_track: np.ndarray
    method: str
    oracle_gap: float | None = None


@dataclass
class FluidModeState:
    n_hat: complex
    m_hat: np.ndarray
    q_hat: complex
    p_hat: complex
    phi_hat: complex

    def constraint_residuals(self, xi: np.ndarray) -> tuple[float, float]:
        """(incompressibility, density-potential constraint) residuals."""
        xi = np.asarray(xi, dtype=float)
        s2 = float(xi @ xi)
        div = abs(xi @ self.m_hat)
        bous = abs(self.n_hat + self.n_hat / s2 + math.sqrt(2.0 / 3.0) * self.q_hat)
        return div, bous


@dataclass
class SpectralProjector:
    """Rank-five projector onto the hydrodynamic eigenspace of one mode."""

    xi: np.ndarray
    eps: float
    matrix: np.ndarray


def hydrodynamic_projector(mode: FourierMode,
                           points: list[BranchPoint] | None = None) -> SpectralProjector:
    """P = sum_j psi_j (G psi_j)^T; the pairing-orthonormality of the branch
    eigenfunctions makes this idempotent."""
    if points is None:
        points = hydrodynamic_spectrum(mode)
    g = mode.metric
    p = sum(np.outer(bp.psi, g @ bp.psi) for bp in points)
    return SpectralProjector(xi=np.asarray(mode.xi), eps=mode.eps, matrix=p)


def _ode_states(mode: FourierMode, f0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Radau integration of the mode ODE, real-stacked; the independent path."""
    a = mode.matrix / mode.eps ** 2
    n = a.shape[0]
    big = np.block([[a.real, -a.imag], [a.imag, a.real]])

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return big @ y

    y0 = np.concatenate([f0.real, f0.imag])
    out = np.empty((times.size, n), dtype=complex)
    if times[0] == 0.0:
        out[0] = f0
        rest = times[1:]
        base = 1
    else:
        rest = times
        base = 0
    if rest.size:
        sol = scipy.integrate.solve_ivp(
            rhs, (0.0, float(rest[-1])), y0, t_eval=rest, method="Radau",
            jac=lambda t, y: big, rtol=ODE_RTOL, atol=ODE_ATOL)
        if not sol.success:
            raise RegimeError(f"stiff integration failed: {sol.message}")
        out[base:] = (sol.y[:n] + 1j * sol.y[n:]).T
    return out


def propagate_kinetic(mode: FourierMode, f0: np.ndarray, times,
                      oracle: bool = False) -> ModeTrajectory:
    """Evolve one mode under the scaled kinetic flow.

    Primary path diagonalizes the mode matrix; if the eigenvector basis is
    too ill-conditioned to trust, the trajectory is integrated instead and
    flagged by method = "ode".  With oracle=True both paths run and the
    largest weighted discrepancy is recorded.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a nonempty 1-D array")
    if times[0] < 0.0 or np.any(np.diff(times) < 0.0):
        raise ValueError("times must be nondecreasing and start at t >= 0")
    f0 = np.asarray(f0, dtype=complex)

    vals, vecs = mode.eigensystem()
    cond = np.linalg.cond(vecs)
    if np.isfinite(cond) and cond < COND_LIMIT:
        method = "eig"
        c = np.linalg.solve(vecs, f0)
        phases = np.exp(np.outer(times, vals) / mode.eps ** 2)
        states = phases * c[None, :] @ vecs.T
    else:
        method = "ode"
        states = _ode_states(mode, f0, times)

    gap = None
    if oracle and method == "eig":
        ref = _ode_states(mode, f0, times)
        gap = max(mode.norm(states[i] - ref[i]) for i in range(times.size))

    norms = np.array([mode.norm(states[i]) for i in range(times.size)])
    return ModeTrajectory(xi=np.asarray(mode.xi), eps=mode.eps, times=times,
                          states=states, norm_track=norms, method=method,
                          oracle_gap=gap)


def split_S1_S2(mode: FourierMode, f0: np.ndarray, t,
                points: list[BranchPoint] | None = None,
                r0: float = R0_DEFAULT) -> tuple[np.ndarray, np.ndarray]:
    """Hydrodynamic part and remainder of the propagated mode at time(s) t.

    The first part sums the five branch contributions weighted by the
    conjugation-free pairing against the branch eigenfunctions, and is cut
    off entirely outside the ball eps|xi| <= r0; the remainder is the full
    propagation minus it, so the two reassemble exactly by construction.
    """
    tarr = np.atleast_1d(np.asarray(t, dtype=float))
    full = propagate_kinetic(mode, f0, tarr).states
    f0 = np.asarray(f0, dtype=complex)
    s1 = np.zeros_like(full)
    if mode.eps * mode.s <= r0:
        if points is None:
            points = hydrodynamic_spectrum(mode, r0=r0)
        for bp in points:
            weight = mode.pair(f0, bp.psi)
            s1 += np.exp(tarr * bp.lam / mode.eps ** 2)[:, None] \
                * (weight * bp.psi)[None, :]
    s2 = full - s1
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return s1[0], s2[0]
    return s1, s2


def _macro_as_vector(basis: VelocityBasis, u0) -> np.ndarray:
    if isinstance(u0, MacroState):
        return macro_vector(basis, u0.n, u0.m, u0.q).astype(complex)
    vec = np.asarray(u0, dtype=complex)
    if vec.shape != (basis.dim,):
        raise DataError(f"fluid data must be a MacroState or a length-{basis.dim} "
                        "coefficient vector")
    micro = basis.micro_project(vec)
    scale = np.linalg.norm(vec)
    if scale > 0 and np.linalg.norm(micro) > 1e-12 * scale:
        raise DataError("fluid initial data must lie in the macroscopic subspace")
    return vec


def fluid_semigroup_V(basis: VelocityBasis, coeffs: TransportCoefficients,
                      u0, xi, times) -> ModeTrajectory:
    """The three-branch fluid semigroup applied to macroscopic data.

    Rank-three evolution: each non-oscillatory branch decays at its own
    e^{-b_j t} with the weighted pairing against the limit vector h_j.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    bundle = asymptotic_coefficients(basis, xi, coeffs)
    s = bundle.s
    times = np.asarray(times, dtype=float)
    u0vec = _macro_as_vector(basis, u0)

    states = np.zeros((times.size, basis.dim), dtype=complex)
    for j in (0, 2, 3):
        h = bundle.h[j]
        weight = bilinear_pair(basis, u0vec, h, s)
        states += np.exp(-bundle.b[j] * times)[:, None] * (weight * h)[None, :]
    norms = np.array([math.sqrt(weighted_inner(basis, st, st, s).real)
                      for st in states])
    full_xi = xi if xi.size == 3 else np.array([s, 0.0, 0.0])
    return ModeTrajectory(xi=full_xi, eps=0.0, times=times, states=states,
                          norm_track=norms, method="fluid")


def closed_fluid_forms(basis: VelocityBasis, coeffs: TransportCoefficients,
                       u0, xi, t: float) -> dict:
    """Moment-space closed forms of the fluid semigroup and its field flux.

    Independent of the eigenvector route: the thermal factor multiplies the
    combination U0 - sqrt(3/2) U4 of the raw moments, the momentum factor is
    the transverse projector, and the field flux is the density component
    scaled by xi/|xi|^2.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    bundle = asymptotic_coefficients(basis, xi, coeffs)
    s = bundle.s
    direction = bundle.direction
    u0vec = _macro_as_vector(basis, u0)
    idx = basis.invariant_indices
    u_mom = np.array([u0vec[idx[1]], u0vec[idx[2]], u0vec[idx[3]]])
    den = 3.0 + 5.0 * s * s

    thermal_scalar = u0vec[idx[0]] - math.sqrt(1.5) * u0vec[idx[4]]
    r0_vec = np.zeros(basis.dim, dtype=complex)
    r0_vec[idx[0]] = 2.0 * s * s / den
    r0_vec[idx[4]] = -math.sqrt(6.0) * (1.0 + s * s) / den

    state = math.exp(-bundle.b[0] * t) * thermal_scalar * r0_vec
    trans = u_mom - (u_mom @ direction) * direction
    mom = math.exp(-bundle.b[2] * t) * trans
    state[idx[1]] += mom[0]
    state[idx[2]] += mom[1]
    state[idx[3]] += mom[2]

    field_flux = math.exp(-bundle.b[0] * t) * thermal_scalar \
        * (2.0 * s / den) * direction.astype(complex)
    return {"state": state, "field_flux": field_flux}


def compatible_initial_values(n0: complex, q0: complex, s: float) -> tuple[complex, complex]:
    """Density/energy values consistent with the density-potential constraint,
    preserving the dynamically meaningful combination q - sqrt(2/3) n."""
    w = q0 - math.sqrt(2.0 / 3.0) * n0
    n_hat = -math.sqrt(6.0) * s * s / (3.0 + 5.0 * s * s) * w
    q_hat = (3.0 + 3.0 * s * s) / (3.0 + 5.0 * s * s) * w
    return n_hat, q_hat


def _phi1(z: complex) -> complex:
    if abs(z) < 1e-5:
        return 1.0 + z / 2.0 + z * z / 6.0
    return np.expm1(z) / z


def _phi2(z: complex) -> complex:
    if abs(z) < 1e-5:
        return 0.5 + z / 6.0 + z * z / 24.0
    return (np.expm1(z) - z) / (z * z)


def _duhamel_linear(b: float, times: np.ndarray, start: complex,
                    forcing: np.ndarray) -> np.ndarray:
    """u' = -b u + F with F piecewise linear through the samples; exact.

    Each step uses the closed-form integral of e^{-b(dt-u)} against a linear
    segment, so the only error in the output is roundoff -- the quadrature
    is exact for forcing that really is piecewise linear.
    """
    out = np.empty(times.size, dtype=complex)
    out[0] = start
    for k in range(times.size - 1):
        dt = times[k + 1] - times[k]
        if dt == 0.0:
            out[k + 1] = out[k]
            continue
        z = -b * dt
        out[k + 1] = out[k] * math.exp(z) \
            + dt * (_phi1(z) * forcing[k] + _phi2(z) * (forcing[k + 1] - forcing[k]))
    return out


def _sample_forcing(h, times: np.ndarray, width: int):
    if h is None:
        shape = (times.size, width) if width > 1 else (times.size,)
        return np.zeros(shape, dtype=complex)
    if callable(h):
        vals = np.array([h(t) for t in times], dtype=complex)
    else:
        vals = np.asarray(h, dtype=complex)
    expect = (times.size,) if width == 1 else (times.size, width)
    if vals.shape != expect:
        raise DataError(f"forcing must be sampled on the time grid with shape {expect}")
    return vals


def nspf_mode_solve(basis: VelocityBasis, coeffs: TransportCoefficients,
                    u0: MacroState, h1, h2, xi, times) -> list[FluidModeState]:
    """Forced fluid mode equations solved through their Duhamel forms.

    The energy variable evolves against the thermal decay rate with the
    (3+3s^2)/(3+5s^2)-weighted forcing, the density follows it through the
    algebraic density-energy relation, and the transverse momentum evolves
    against the shear rate with the projected vector forcing.  Initial data
    must already satisfy both constraints; the rejection carries the
    repaired values.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.size == 1:
        xi = np.array([float(xi[0]), 0.0, 0.0])
    s = float(np.linalg.norm(xi))
    if s == 0.0:
        raise DataError("the zero wavevector has no fluid mode system")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) < 0.0):
        raise DataError("times must be a nondecreasing grid with at least two samples")

    n0, q0 = complex(u0.n), complex(u0.q)
    m0 = np.asarray(u0.m, dtype=complex)
    scale = max(abs(n0), abs(q0), float(np.max(np.abs(m0))), 1e-30)
    n_fix, q_fix = compatible_initial_values(n0, q0, s)
    m_fix = m0 - (m0 @ xi) / (s * s) * xi
    div = abs(xi @ m0)
    bous = abs(n0 + n0 / (s * s) + math.sqrt(2.0 / 3.0) * q0)
    if div > 1e-10 * scale or bous > 1e-10 * scale:
        raise DataError(
            "fluid initial data violates the mode constraints "
            f"(divergence {div:.2e}, density-potential {bous:.2e}); "
            "the suggestion field carries compatible values",
            suggestion={"n_hat": n_fix, "m_hat": m_fix, "q_hat": q_fix})

    b0 = branch_decay(0, s, coeffs)
    b2 = branch_decay(2, s, coeffs)
    c_w = (3.0 + 3.0 * s * s) / (3.0 + 5.0 * s * s)

    h1_vals = _sample_forcing(h1, times, 3)
    h2_vals = _sample_forcing(h2, times, 1)
    h1_perp = h1_vals - np.outer(h1_vals @ xi, xi) / (s * s)

    q_traj = _duhamel_linear(b0, times, q0, c_w * h2_vals)
    n_traj = -math.sqrt(2.0 / 3.0) * s * s / (1.0 + s * s) * q_traj
    m_traj = np.column_stack([
        _duhamel_linear(b2, times, m0[i], h1_perp[:, i]) for i in range(3)])
    p_traj = -1j * (h1_vals @ xi) / (s * s)

    out = []
    for k in range(times.size):
        out.append(FluidModeState(
            n_hat=complex(n_traj[k]),
            m_hat=m_traj[k],
            q_hat=complex(q_traj[k]),
            p_hat=complex(p_traj[k]),
            phi_hat=complex(-n_traj[k] / (s * s)),
        ))
    return out


class DecayFit(NamedTuple):
    rate: float
    r_squared: float
    model: str
    n_samples: int


def fit_decay(trajectory, model: str = "exp", transient: float = 0.0,
              slack: float = 0.02) -> DecayFit:
    """Least-squares decay-rate fit in log coordinates.

    model "exp" fits log v = c - r t; model "poly" fits log v = c - r log(1+t).
    Requires at least eight samples past the transient window and a
    monotone (within `slack` relative wiggle) positive tail.
    """
    if isinstance(trajectory, ModeTrajectory):
        times, values = trajectory.times, trajectory.norm_track
    else:
        times, values = trajectory
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = times >= transient
    times, values = times[keep], values[keep]
    if times.size < 8:
        raise FitError(f"need at least 8 samples past the transient, have {times.size}")
    if np.any(values <= 0.0):
        raise FitError("decay fit requires strictly positive values")
    if np.any(np.diff(values) > slack * values[:-1]):
        worst = float(np.max(np.diff(values) / values[:-1]))
        raise FitError(f"tail is not monotone (relative increase {worst:.2e}); "
                       "widen the transient window or inspect the trajectory")
    if model == "exp":
        xs = times
    elif model == "poly":
        xs = np.log1p(times)
    else:
        raise ValueError(f"unknown decay model {model!r}")
    ys = np.log(values)
    slope, intercept = np.polyfit(xs, ys, 1)
    fitted = slope * xs + intercept
    ss_res = float(np.sum((ys - fitted) ** 2))
    ss_tot = float(np.sum((ys - np.mean(ys)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(rate=float(-slope), r_squared=r2, model=model,
                    n_samples=int(times.size))
