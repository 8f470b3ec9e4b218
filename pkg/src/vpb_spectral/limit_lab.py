"""Diffusion-limit experiments on a radial wavevector grid.

Every spatial quantity here is synthesized from per-shell Fourier modes:
the spectra depend only on |xi|, so a radial grid with the axis
representative xi = s*e1 per shell carries all the information, and the
L-infinity norms in x are bounded through the L1-in-xi synthesis
4*pi * sum_k s_k^2 w_k ||f_hat(s_k)||_{s_k}.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .collision import CollisionOperator
from .dispersion import AsymptoticCoefficients, asymptotic_coefficients
from .errors import BackendError, DataError, FitError
from .mode_operator import mode_operator
from .semigroup import compatible_initial_values, fluid_semigroup_V, propagate_kinetic
from .transport import TransportCoefficients, compute_kappas
from .velocity_space import (
    MacroState,
    VelocityBasis,
    bilinear_pair,
    macro_vector,
    multiplication_matrices,
    weighted_norm,
)

S_MIN_DEFAULT = 0.05  # zero mode excluded: the Poisson factor diverges there
CONSTRAINT_TOL = 1e-12


@dataclass(frozen=True)
class RadialGrid:
    """Quadrature shells for radial synthesis; weights are plain ds weights."""

    nodes: np.ndarray
    weights: np.ndarray
    spacing: str
    s_min: float
    s_max: float

    @property
    def count(self) -> int:
        return self.nodes.size

    def refined(self) -> "RadialGrid":
        return radial_grid(self.s_min, self.s_max, 2 * self.count, self.spacing)

    def descriptor(self) -> dict:
        return {"s_min": self.s_min, "s_max": self.s_max,
                "count": int(self.count), "spacing": self.spacing}


def radial_grid(s_min: float = S_MIN_DEFAULT, s_max: float = 0.6,
                count: int = 32, spacing: str = "legendre") -> RadialGrid:
    if s_min <= 0.0:
        raise DataError(f"s_min={s_min} must be positive; the zero mode has no Poisson factor")
    if s_max <= s_min or count < 2:
        raise DataError("radial grid needs s_max > s_min and at least two shells")
    if spacing == "legendre":
        x, w = np.polynomial.legendre.leggauss(count)
        nodes = 0.5 * (s_max - s_min) * (x + 1.0) + s_min
        weights = 0.5 * (s_max - s_min) * w
    elif spacing == "uniform":
        nodes = np.linspace(s_min, s_max, count)
        weights = np.full(count, (s_max - s_min) / (count - 1))
        weights[0] *= 0.5
        weights[-1] *= 0.5
    else:
        raise DataError(f"unknown grid spacing {spacing!r}")
    return RadialGrid(nodes=nodes, weights=weights, spacing=spacing,
                      s_min=float(s_min), s_max=float(s_max))


@dataclass
class InitialData:
    """Per-shell mode coefficients of the initial perturbation."""

    kind: str
    grid: RadialGrid
    basis: VelocityBasis
    profile: np.ndarray            # (count, dim) complex
    macro_profile: list[MacroState]

    def shell(self, k: int) -> np.ndarray:
        return self.profile[k]


def _macro_of(basis: VelocityBasis, vec: np.ndarray, s: float) -> MacroState:
    i0, i1, i2, i3, i4 = basis.invariant_indices
    n = complex(vec[i0])
    return MacroState(n=n, m=np.array([vec[i1], vec[i2], vec[i3]]),
                      q=complex(vec[i4]), phi_factor=n / s ** 2)


def _well_prepared_checks(basis: VelocityBasis, vec: np.ndarray, s: float) -> dict:
    """Residuals of the three preparation constraints at one shell."""
    st = _macro_of(basis, vec, s)
    micro = float(np.linalg.norm(basis.micro_project(vec)))
    div = abs(s * st.m[0])
    bous = abs(st.n + st.n / s ** 2 + math.sqrt(2.0 / 3.0) * st.q)
    return {"micro": micro, "divergence": div, "boussinesq": bous}


def make_initial_data(kind: str, spectral_profile, basis: VelocityBasis,
                      grid: RadialGrid | None = None, macro_profile=None,
                      auto_correct: bool = True) -> InitialData:
    """Build per-shell initial data from a decaying amplitude profile.

    generic data carries density, parallel and transverse momentum, energy
    and a microscopic component, so both acoustic projections and the
    initial layer are present.  well_prepared data lives in the null space
    with divergence-free momentum and the Poisson-compatible density, which
    kills the acoustic projections identically.

    macro_profile optionally overrides the shell moments: a callable
    s -> (n, m, q).  An incompatible override under well_prepared is either
    repaired through the canonical compatibility formulas (auto_correct) or
    rejected with the repaired values attached.
    """
    if kind not in ("generic", "well_prepared"):
        raise DataError(f"unknown initial-data kind {kind!r}")
    if grid is None:
        grid = radial_grid()
    dim = basis.dim
    profile = np.zeros((grid.count, dim), dtype=complex)
    micro_seed = basis.micro_project(
        multiplication_matrices(basis)[0] @ basis.chi(2))
    micro_seed = micro_seed / np.linalg.norm(micro_seed)
    macro_states: list[MacroState] = []
    for k, s in enumerate(grid.nodes):
        amp = complex(spectral_profile(s))
        if macro_profile is not None:
            n0, m0, q0 = macro_profile(s)
            m0 = np.asarray(m0, dtype=complex)
        elif kind == "generic":
            n0 = 0.4 * amp
            m0 = amp * np.array([0.8, 0.5, -0.3])
            q0 = -0.6 * amp
        else:
            q0 = amp
            n0 = -math.sqrt(2.0 / 3.0) * s * s / (1.0 + s * s) * q0
            m0 = amp * np.array([0.0, 0.7, -0.4])
        if kind == "well_prepared":
            n_fix, q_fix = compatible_initial_values(n0, q0, s)
            m_fix = m0.copy()
            m_fix[0] = 0.0
            drift = max(abs(n_fix - n0), abs(q_fix - q0),
                        float(np.max(np.abs(m_fix - m0))))
            if drift > CONSTRAINT_TOL * max(1.0, abs(amp)):
                if not auto_correct:
                    raise DataError(
                        f"macro profile violates the preparation constraints at s={s:.4g}",
                        suggestion={"n_hat": n_fix, "m_hat": m_fix, "q_hat": q_fix})
                n0, m0, q0 = n_fix, m_fix, q_fix
        vec = macro_vector(basis, n0, m0, q0).astype(complex)
        if kind == "generic":
            vec = vec + 0.5 * amp * micro_seed
        profile[k] = vec
        macro_states.append(_macro_of(basis, vec, float(s)))
    data = InitialData(kind=kind, grid=grid, basis=basis, profile=profile,
                       macro_profile=macro_states)
    if kind == "well_prepared":
        _assert_well_prepared(data)
    return data


def _assert_well_prepared(data: InitialData) -> None:
    worst = {"micro": 0.0, "divergence": 0.0, "boussinesq": 0.0, "acoustic": 0.0}
    for k, s in enumerate(data.grid.nodes):
        res = _well_prepared_checks(data.basis, data.profile[k], float(s))
        for key in res:
            worst[key] = max(worst[key], res[key])
        hs = _bundle_cache(data.basis, float(s)).h
        for j in (-1, 1):
            worst["acoustic"] = max(worst["acoustic"], abs(
                bilinear_pair(data.basis, data.profile[k], hs[j], float(s))))
    bad = {k: v for k, v in worst.items() if v > CONSTRAINT_TOL}
    if bad:
        raise DataError(f"well-prepared invariants violated: {bad}")


_H_CACHE: dict[tuple, AsymptoticCoefficients] = {}


def _bundle_cache(basis: VelocityBasis, s: float,
                  coeffs: TransportCoefficients | None = None) -> AsymptoticCoefficients:
    key = (basis.descriptor_hash(), round(s, 14),
           None if coeffs is None else (coeffs.kappa0, coeffs.kappa1))
    if key not in _H_CACHE:
        # the h vectors and frequencies are coefficient-free, so constraint
        # checks may use a unit-coefficient stand-in
        use = coeffs if coeffs is not None else TransportCoefficients(
            kappa0=1.0, kappa1=1.0, kappa0_long=4.0 / 3.0,
            backend="placeholder", max_degree=0, basis_hash="")
        _H_CACHE[key] = asymptotic_coefficients(basis, s, use)
    return _H_CACHE[key]


def synth_norm_LinfP(basis: VelocityBasis, grid: RadialGrid, fld: np.ndarray,
                     field_fn=None, refine_tol: float = 0.05) -> float:
    """Radial L1 synthesis 4*pi sum_k s_k^2 w_k ||f_hat(s_k)||_{s_k}.

    Upper bound surrogate for the sup-in-x norm of the inverse transform.
    With field_fn (a callable s -> coefficient vector) the value is checked
    against a doubled grid and a coarseness warning is emitted when the two
    disagree by more than refine_tol.
    """
    fld = np.asarray(fld)
    if fld.shape != (grid.count, basis.dim):
        raise DataError(f"field shape {fld.shape} does not match grid x basis "
                        f"({grid.count}, {basis.dim})")
    total = 0.0
    for k, (s, w) in enumerate(zip(grid.nodes, grid.weights)):
        total += 4.0 * math.pi * s * s * w * weighted_norm(basis, fld[k], float(s))
    if field_fn is not None:
        fine = grid.refined()
        fine_total = 0.0
        for s, w in zip(fine.nodes, fine.weights):
            fine_total += 4.0 * math.pi * s * s * w * weighted_norm(
                basis, np.asarray(field_fn(float(s))), float(s))
        if abs(fine_total - total) > refine_tol * max(abs(fine_total), 1e-300):
            warnings.warn(
                f"radial grid too coarse: refinement moves the norm by "
                f"{abs(fine_total - total) / max(abs(fine_total), 1e-300):.2%}",
                stacklevel=2)
    return total


def oscillation_part(data: InitialData, coeffs: TransportCoefficients,
                     t: float, eps: float) -> np.ndarray:
    """Acoustic-branch layer field at time t, one row per shell.

    Each shell evolves its two acoustic projections with the closed-form
    phase exp(eta_j t / eps - b_j t); well-prepared data has no acoustic
    content, so the result vanishes identically there.
    """
    basis = data.basis
    out = np.zeros_like(data.profile)
    for k, s in enumerate(data.grid.nodes):
        s = float(s)
        bundle = _bundle_cache(basis, s, coeffs)
        macro = basis.macro_project(data.profile[k])
        for j in (-1, 1):
            coef = bilinear_pair(basis, macro, bundle.h[j], s)
            phase = np.exp(bundle.eta[j] * t / eps - bundle.b[j] * t)
            out[k] += phase * coef * bundle.h[j]
    return out


def layer_frequency(op: CollisionOperator, eps: float, s_probe: float,
                    f0: np.ndarray | None = None) -> float:
    """Measured angular frequency of the initial-layer oscillation.

    Propagates one shell over the window T = 100*eps sampled at eps/4 and
    locates the dominant positive-frequency peak of the parallel-momentum
    signal, Hann-windowed with parabolic interpolation of the peak bin.
    """
    basis = op.basis
    if f0 is None:
        f0 = macro_vector(basis, 0.3, [1.0, 0.0, 0.0], -0.2).astype(complex)
    dt = eps / 4.0
    times = np.arange(0.0, 100.0 * eps, dt)
    mode = mode_operator(op, eps, np.array([s_probe, 0.0, 0.0]))
    traj = propagate_kinetic(mode, f0, times)
    signal = traj.states[:, basis.invariant_indices[1]]
    window = np.hanning(signal.size)
    spectrum = np.fft.fft(signal * window)
    freqs = np.fft.fftfreq(signal.size, d=dt)
    pos = freqs > 0
    mag = np.abs(spectrum[pos])
    fpos = freqs[pos]
    peak = int(np.argmax(mag))
    if 0 < peak < mag.size - 1:
        lm, l0, lp = np.log(mag[peak - 1:peak + 2])
        shift = 0.5 * (lm - lp) / (lm - 2 * l0 + lp)
    else:
        shift = 0.0
    return float(2.0 * math.pi * (fpos[peak] + shift * (fpos[1] - fpos[0])))


def layer_time_grid(eps: float, t_max: float, n_layer: int = 12,
                    n_bulk: int = 24) -> np.ndarray:
    """Geometric bulk grid with a linear refinement inside the layer [0, 10 eps]."""
    edge = min(10.0 * eps, 0.5 * t_max)
    layer = np.linspace(0.0, edge, n_layer, endpoint=False)
    bulk = np.geomspace(edge, t_max, n_bulk)
    return np.unique(np.concatenate([layer, bulk]))


ERROR_COLUMNS = ("eps", "t", "err_Linf_P", "err_macro", "err_micro")


@dataclass
class ErrorTable:
    """Convergence-study output: one row per (eps, t), plus run metadata."""

    eps: np.ndarray
    t: np.ndarray
    err_Linf_P: np.ndarray
    err_macro: np.ndarray
    err_micro: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        keys = list(zip(self.eps.tolist(), self.t.tolist()))
        if len(set(keys)) != len(keys):
            raise DataError("duplicate (eps, t) rows in error table")
        for name in ("err_Linf_P", "err_macro", "err_micro"):
            if np.any(getattr(self, name) < 0):
                raise DataError(f"negative entries in {name}")

    def rows(self):
        for i in range(self.eps.size):
            yield (float(self.eps[i]), float(self.t[i]),
                   float(self.err_Linf_P[i]), float(self.err_macro[i]),
                   float(self.err_micro[i]))

    def for_eps(self, eps: float) -> dict[str, np.ndarray]:
        sel = self.eps == eps
        return {name: getattr(self, name)[sel]
                for name in ("t", "err_Linf_P", "err_macro", "err_micro")}


def _shell_errors(basis, mode, f0_vec, fluid_states, times, subtract, bundle,
                  eps, couple=True):
    """Per-time (total, macro, micro) kinetic-minus-fluid norms at one shell."""
    if couple:
        states = propagate_kinetic(mode, f0_vec, times).states
    else:
        # decoupled consistency mode: the kinetic solver is replaced by the
        # fluid one, so the assembled errors must come out exactly zero
        states = fluid_states
    diff = states - fluid_states
    if subtract:
        micro0 = basis.micro_project(f0_vec)
        if np.linalg.norm(micro0) > 0.0:
            diff = diff - propagate_kinetic(mode, micro0, times).states
        macro = basis.macro_project(f0_vec)
        for j in (-1, 1):
            coef = bilinear_pair(basis, macro, bundle.h[j], mode.s)
            phases = np.exp(bundle.eta[j] * times / eps - bundle.b[j] * times)
            diff = diff - phases[:, None] * (coef * bundle.h[j])[None, :]
    out = np.empty((times.size, 3))
    for i in range(times.size):
        out[i, 0] = weighted_norm(basis, diff[i], mode.s)
        out[i, 1] = weighted_norm(basis, basis.macro_project(diff[i]), mode.s)
        out[i, 2] = float(np.linalg.norm(basis.micro_project(diff[i])))
    return out


def run_convergence_study(op: CollisionOperator, data: InitialData, eps_list,
                          time_grid, coeffs: TransportCoefficients | None = None,
                          subtract_layer: bool = False, couple: bool = True,
                          jobs: int = 1) -> ErrorTable:
    """Kinetic-versus-fluid error synthesis over an (eps, shell) sweep.

    Per shell the kinetic mode is propagated from the full data while the
    fluid semigroup propagates its macroscopic projection; the per-shell
    gaps are synthesized into radial norms.  subtract_layer removes the
    oscillation part and the microscopic kinetic propagation before taking
    norms, which is the combination whose gap stays first order in eps
    uniformly down to t = 0.  couple=False replaces the kinetic solver by
    the fluid one (a pipeline identity check: errors must vanish).

    Weighted-sup slopes over eps land in metadata; fewer than three eps
    values cannot support the fit and are refused.
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3:
        raise FitError("slope fit refused: need at least three eps values")
    if coeffs is None:
        coeffs = compute_kappas(op, allow_synthetic=True)
    times = np.asarray(time_grid, dtype=float)
    basis = data.basis
    grid = data.grid

    def shell_task(args):
        eps, k = args
        s = float(grid.nodes[k])
        mode = mode_operator(op, eps, np.array([s, 0.0, 0.0]))
        bundle = _bundle_cache(basis, s, coeffs)
        macro = basis.macro_project(data.profile[k])
        fluid = fluid_semigroup_V(basis, coeffs, macro, np.array([s, 0.0, 0.0]),
                                  times).states
        return _shell_errors(basis, mode, data.profile[k], fluid, times,
                             subtract_layer and couple, bundle, eps, couple)

    tasks = [(eps, k) for eps in eps_list for k in range(grid.count)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(shell_task, tasks))
    else:
        results = [shell_task(t) for t in tasks]

    rows_eps, rows_t = [], []
    err_tot, err_mac, err_mic = [], [], []
    for i_eps, eps in enumerate(eps_list):
        acc = np.zeros((times.size, 3))
        for k in range(grid.count):
            s, w = float(grid.nodes[k]), float(grid.weights[k])
            acc += 4.0 * math.pi * s * s * w * results[i_eps * grid.count + k]
        for i_t, t in enumerate(times):
            rows_eps.append(eps)
            rows_t.append(float(t))
            err_tot.append(acc[i_t, 0])
            err_mac.append(acc[i_t, 1])
            err_mic.append(acc[i_t, 2])

    table = ErrorTable(
        eps=np.array(rows_eps), t=np.array(rows_t),
        err_Linf_P=np.array(err_tot), err_macro=np.array(err_mac),
        err_micro=np.array(err_mic),
        metadata={
            "kind": data.kind,
            "backend": op.backend,
            "basis": op.basis.descriptor_hash(),
            "s_grid": grid.descriptor(),
            "eps_list": eps_list,
            "subtract_layer": subtract_layer,
            "couple": couple,
        })
    exponent = 0.5 if subtract_layer else 0.75
    table.metadata["weight_exponent"] = exponent
    sups = {f"{e:.17g}": weighted_sup(table, e, exponent) for e in eps_list}
    table.metadata["weighted_sup"] = sups
    table.metadata["eps_slope"] = (eps_slope(table, exponent)
                                   if all(v > 0.0 for v in sups.values()) else None)
    return table


def weighted_sup(table: ErrorTable, eps: float, exponent: float) -> float:
    """sup over positive grid times of (1+t)^exponent * total error."""
    cols = table.for_eps(eps)
    keep = cols["t"] > 0.0
    if not np.any(keep):
        raise FitError("no positive times in the table")
    return float(np.max((1.0 + cols["t"][keep]) ** exponent
                        * cols["err_Linf_P"][keep]))


def eps_slope(table: ErrorTable, exponent: float) -> float:
    eps_vals = sorted(set(table.eps.tolist()))
    if len(eps_vals) < 3:
        raise FitError("slope fit refused: need at least three eps values")
    sups = [weighted_sup(table, e, exponent) for e in eps_vals]
    return float(np.polyfit(np.log(eps_vals), np.log(sups), 1)[0])


def layer_bump_ratio(table: ErrorTable, eps: float, t_gap: float) -> float:
    """Largest post-gap error over the first positive-time error."""
    cols = table.for_eps(eps)
    pos = cols["t"] > 0.0
    base = cols["err_Linf_P"][pos][0]
    late = cols["err_Linf_P"][cols["t"] >= t_gap]
    if late.size == 0 or base <= 0.0:
        raise FitError("gap window empty or baseline error vanished")
    return float(np.max(late) / base)


@dataclass
class HilbertReport:
    """Residuals of the formal expansion check on the discretization."""

    kappa0_extracted: float
    kappa1_extracted: float
    kappa0_reference: float
    kappa1_reference: float
    constraint_divergence: float
    constraint_gradient: float
    gamma_micro_norm: float | None
    gamma_macro_leak: float | None
    note: str

    @property
    def kappa_residuals(self) -> tuple[float, float]:
        return (abs(self.kappa0_extracted - self.kappa0_reference)
                / self.kappa0_reference,
                abs(self.kappa1_extracted - self.kappa1_reference)
                / self.kappa1_reference)


def hilbert_expansion_check(op: CollisionOperator, data: InitialData,
                            coeffs: TransportCoefficients | None = None) -> HilbertReport:
    """Re-derive the limit diffusion coefficients from the moment route.

    The first-order micro correction is the collision solve of the streamed
    macro state; feeding its flux back into the second-order moment
    equations must reproduce the momentum and energy diffusion constants.
    The quadratic collision product is evaluated at a single mode triple
    only (spatial convolutions are out of scope here) and reported, not
    asserted.
    """
    basis = op.basis
    if coeffs is None:
        coeffs = compute_kappas(op, allow_synthetic=True)
    v1 = multiplication_matrices(basis)[0]
    inv = set(basis.invariant_indices)
    micro_idx = np.array([i for i in range(basis.dim) if i not in inv])
    l_micro = op.matrix[np.ix_(micro_idx, micro_idx)]

    def extract(j: int) -> float:
        # first-order correction from the restricted collision solve, fed
        # back through the streaming flux of the moment equations
        streamed = basis.micro_project(v1 @ basis.chi(j))
        correction = np.zeros(basis.dim)
        correction[micro_idx] = np.linalg.solve(l_micro, streamed[micro_idx])
        return -float((v1 @ correction) @ basis.chi(j))

    kappa0_ext = extract(2)
    kappa1_ext = extract(4)

    div = grad = 0.0
    for k, s in enumerate(data.grid.nodes):
        res = _well_prepared_checks(basis, data.profile[k], float(s))
        div = max(div, res["divergence"])
        st = data.macro_profile[k]
        phi = st.n / (float(s) ** 2)
        grad = max(grad, abs(float(s) * (st.n + phi
                                         + math.sqrt(2.0 / 3.0) * st.q)))

    gamma_micro = gamma_leak = None
    note = "quadratic product evaluated at one mode triple; x-convolutions truncated"
    try:
        form = op.gamma_form()
        mid = data.grid.count // 2
        f0 = data.profile[mid]
        out = form.form(f0, f0)
        gamma_micro = float(np.linalg.norm(basis.micro_project(out)))
        gamma_leak = float(np.linalg.norm(basis.macro_project(out)))
    except BackendError:
        note = "quadratic product unavailable on this backend"

    return HilbertReport(
        kappa0_extracted=kappa0_ext, kappa1_extracted=kappa1_ext,
        kappa0_reference=coeffs.kappa0, kappa1_reference=coeffs.kappa1,
        constraint_divergence=div, constraint_gradient=grad,
        gamma_micro_norm=gamma_micro, gamma_macro_leak=gamma_leak, note=note)
