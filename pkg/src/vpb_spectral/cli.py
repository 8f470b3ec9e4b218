"""Batch front-end: parse a config, run one experiment, emit tables.

Artifacts are named <subcommand>-<confighash>.<ext> so a changed config can
never silently overwrite another run, while an unchanged config reproduces
its files byte for byte (floats are written with %.17g, reductions are
ordered, and the worker pool preserves submission order).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .collision import CollisionOperator, assemble_collision, synthetic_collision
from .config import ExperimentConfig, apply_overrides, parse_config, validate_config
from .dispersion import asymptotic_coefficients, hydrodynamic_spectrum
from .errors import ConfigError, VPBError
from .limit_lab import (
    layer_time_grid,
    make_initial_data,
    oscillation_part,
    radial_grid,
    run_convergence_study,
    synth_norm_LinfP,
)
from .mode_operator import mode_operator
from .semigroup import (
    fluid_semigroup_V,
    nspf_mode_solve,
    propagate_kinetic,
    split_S1_S2,
)
from .transport import (
    asymptotic_eigenvalue,
    compute_kappas,
    kappas_with_error,
)
from .velocity_space import MacroState, build_basis, macro_vector, weighted_norm

R0_BALL = 0.3  # admissible eps*s for the five-branch construction

SUBCOMMANDS = ("check", "spectrum", "dispersion", "transport", "semigroup", "converge")


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def write_csv(path: Path, header: tuple, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True))
        fh.write("\n")


def build_operator(cfg: ExperimentConfig) -> CollisionOperator:
    basis = build_basis(cfg.max_degree,
                        quad_order=cfg.quad_order if cfg.quad_order else None)
    if cfg.backend == "synthetic":
        return synthetic_collision(basis, nu_bar=cfg.nu_bar)
    return assemble_collision(basis, gamma=cfg.gamma, kernel_c=cfg.kernel_c)


def _grid(cfg: ExperimentConfig):
    return radial_grid(cfg.s_min, cfg.s_max, cfg.s_count, cfg.s_spacing)


def _profile(cfg: ExperimentConfig):
    sig2 = 2.0 * cfg.profile_sigma ** 2
    return lambda s: math.exp(-s * s / sig2)


def _artifact(cfg: ExperimentConfig, subcommand: str, ext: str) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / f"{subcommand}-{cfg.digest()}.{ext}"


def _coeffs(op: CollisionOperator):
    return compute_kappas(op, allow_synthetic=True)


# ---------------------------------------------------------------- spectrum

SPECTRUM_HEADER = ("s", "eps", "branch", "re_lambda", "im_lambda",
                   "det_residual", "eig_residual")


def run_spectrum(cfg: ExperimentConfig) -> int:
    op = build_operator(cfg)
    grid = _grid(cfg)
    pairs = [(eps, float(s)) for eps in cfg.eps_list for s in grid.nodes
             if eps * float(s) <= R0_BALL]
    skipped = len(cfg.eps_list) * grid.count - len(pairs)
    if skipped:
        print(f"note: {skipped} (eps, s) pairs outside the eps*s <= {R0_BALL} "
              "ball were skipped", file=sys.stderr)

    def task(pair):
        eps, s = pair
        mode = mode_operator(op, eps, np.array([s, 0.0, 0.0]))
        return hydrodynamic_spectrum(mode)

    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        results = list(pool.map(task, pairs))
    rows = []
    for (eps, s), points in zip(pairs, results):
        for bp in points:
            rows.append((s, eps, bp.branch, bp.lam.real, bp.lam.imag,
                         bp.det_residual, bp.eig_residual))
    path = _artifact(cfg, "spectrum", "csv")
    write_csv(path, SPECTRUM_HEADER, rows)
    print(path)
    return 0


# --------------------------------------------------------------- dispersion

DISPERSION_HEADER = ("branch", "s", "eps", "re_lambda", "im_lambda",
                     "asym_residual", "det_residual", "eig_residual")


def run_dispersion(cfg: ExperimentConfig) -> int:
    op = build_operator(cfg)
    coeffs = _coeffs(op)
    grid = _grid(cfg)
    pairs = [(eps, float(s)) for eps in cfg.eps_list for s in grid.nodes
             if eps * float(s) <= R0_BALL]

    def task(pair):
        eps, s = pair
        mode = mode_operator(op, eps, np.array([s, 0.0, 0.0]))
        return hydrodynamic_spectrum(mode)

    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        results = list(pool.map(task, pairs))
    rows = []
    for (eps, s), points in zip(pairs, results):
        for bp in points:
            model = asymptotic_eigenvalue(bp.branch, s, eps, coeffs)
            rows.append((bp.branch, s, eps, bp.lam.real, bp.lam.imag,
                         abs(bp.lam - model), bp.det_residual, bp.eig_residual))
    path = _artifact(cfg, "dispersion", "csv")
    write_csv(path, DISPERSION_HEADER, rows)
    print(path)
    return 0


# ---------------------------------------------------------------- transport

def run_transport(cfg: ExperimentConfig) -> int:
    if cfg.backend == "hard_sphere":
        coeffs = kappas_with_error(cfg.max_degree, gamma=cfg.gamma,
                                   kernel_c=cfg.kernel_c)
    else:
        coeffs = _coeffs(build_operator(cfg))
    payload = {
        "schema": cfg.schema,
        "config": cfg.digest(),
        "backend": coeffs.backend,
        "max_degree": coeffs.max_degree,
        "kappa0": coeffs.kappa0,
        "kappa1": coeffs.kappa1,
        "kappa0_long": coeffs.kappa0_long,
        "error_bar": coeffs.error_bar,
        "basis_hash": coeffs.basis_hash,
    }
    path = _artifact(cfg, "transport", "json")
    write_json(path, payload)
    print(path)
    return 0


# ---------------------------------------------------------------- semigroup

SEMIGROUP_HEADER = ("t", "norm_xi", "norm_macro", "norm_micro", "norm_s2")


def run_semigroup(cfg: ExperimentConfig) -> int:
    op = build_operator(cfg)
    basis = op.basis
    grid = _grid(cfg)
    data = make_initial_data(cfg.kind, _profile(cfg), basis, grid)
    eps = cfg.eps_list[0]
    probe = grid.count // 2
    s = float(grid.nodes[probe])
    mode = mode_operator(op, eps, np.array([s, 0.0, 0.0]))
    times = layer_time_grid(eps, cfg.t_max, cfg.n_layer, cfg.n_bulk)
    f0 = data.shell(probe)
    traj = propagate_kinetic(mode, f0, times)
    _, s2 = split_S1_S2(mode, f0, times)
    rows = []
    for i, t in enumerate(times):
        state = traj.states[i]
        rows.append((
            float(t),
            weighted_norm(basis, state, s),
            weighted_norm(basis, basis.macro_project(state), s),
            float(np.linalg.norm(basis.micro_project(state))),
            weighted_norm(basis, s2[i], s),
        ))
    path = _artifact(cfg, "semigroup", "csv")
    write_csv(path, SEMIGROUP_HEADER, rows)
    print(path)
    return 0


# ----------------------------------------------------------------- converge

CONVERGE_HEADER = ("eps", "t", "err_Linf_P", "err_macro", "err_micro")


def run_converge(cfg: ExperimentConfig) -> int:
    op = build_operator(cfg)
    coeffs = _coeffs(op)
    grid = _grid(cfg)
    data = make_initial_data(cfg.kind, _profile(cfg), op.basis, grid)
    times = layer_time_grid(max(cfg.eps_list), cfg.t_max, cfg.n_layer, cfg.n_bulk)
    table = run_convergence_study(op, data, list(cfg.eps_list), times, coeffs,
                                  subtract_layer=cfg.subtract_layer,
                                  jobs=cfg.jobs)
    csv_path = _artifact(cfg, "converge", "csv")
    write_csv(csv_path, CONVERGE_HEADER, table.rows())
    meta = dict(table.metadata)
    meta["config"] = cfg.digest()
    meta["time_grid"] = {"t_max": cfg.t_max, "n_layer": cfg.n_layer,
                         "n_bulk": cfg.n_bulk, "points": int(times.size)}
    json_path = _artifact(cfg, "converge", "json")
    write_json(json_path, meta)
    print(csv_path)
    print(json_path)
    return 0


# -------------------------------------------------------------------- check

def _check_steps(cfg: ExperimentConfig):
    """Yield (name, callable) invariant checks; callables raise on failure."""
    op = build_operator(cfg)
    basis = op.basis
    tol = cfg.tol
    rng = np.random.default_rng(cfg.seed)

    def basis_orthonormal():
        gram = basis.node_poly.T @ (basis.gauss_weights[:, None] * basis.node_poly)
        resid = float(np.max(np.abs(gram - np.eye(basis.dim))))
        assert resid <= 1e-10, f"gram residual {resid:.2e}"

    def collision_structure():
        mat = op.matrix
        scale = float(np.max(np.abs(mat)))
        asym = float(np.max(np.abs(mat - mat.T)))
        assert asym <= 1e-10 * scale, f"asymmetry {asym:.2e}"
        for k in range(5):
            r = float(np.linalg.norm(mat @ basis.chi(k)))
            assert r <= 1e-10 * scale, f"invariant {k} residual {r:.2e}"
        vals = np.sort(np.linalg.eigvalsh(-mat))
        assert np.all(vals[:5] <= 1e-8 * scale), "null space short of five dims"
        assert vals[5] > 0.0, "no spectral gap"

    def mode_dissipation():
        mode = mode_operator(op, cfg.eps_list[0], np.array([0.4, 0.0, 0.0]))
        f = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
        diss = mode.dissipation(f)
        ref = float(np.real(np.vdot(f, op.matrix @ f)))
        assert diss <= 1e-12 * np.linalg.norm(f) ** 2, f"positive dissipation {diss:.2e}"
        assert abs(diss - ref) <= 1e-8 * max(1.0, abs(ref)), "metric broke the collision form"

    def dispersion_consistency():
        eps = min(cfg.eps_list)
        mode = mode_operator(op, eps, np.array([0.5, 0.0, 0.0]))
        points = hydrodynamic_spectrum(mode)
        dense = np.linalg.eigvals(np.asarray(mode.matrix))
        for bp in points:
            assert bp.det_residual <= tol, f"det residual {bp.det_residual:.2e}"
            gap = float(np.min(np.abs(dense - bp.lam)))
            assert gap <= 1e-8, f"branch {bp.branch} misses dense spectrum by {gap:.2e}"

    def transport_positive():
        coeffs = _coeffs(op)
        assert coeffs.kappa0 > 0 and coeffs.kappa1 > 0, "nonpositive coefficient"
        iso = abs(coeffs.kappa0_long - 4.0 / 3.0 * coeffs.kappa0)
        assert iso <= 1e-10 * coeffs.kappa0, f"isotropy broken by {iso:.2e}"

    def semigroup_split():
        eps = cfg.eps_list[0]
        mode = mode_operator(op, eps, np.array([0.5, 0.0, 0.0]))
        f = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
        times = np.array([0.0, 0.05, 0.2])
        traj = propagate_kinetic(mode, f, times)
        assert np.max(np.abs(traj.states[0] - f)) <= 1e-12, "t=0 is not the identity"
        assert np.all(np.diff(traj.norm_track) <= 1e-9 * traj.norm_track[0]), \
            "norm grew along the flow"
        s1, s2 = split_S1_S2(mode, f, times)
        resid = float(np.max(np.abs(s1 + s2 - traj.states)))
        assert resid <= 1e-12, f"split reassembly off by {resid:.2e}"

    def fluid_consistency():
        coeffs = _coeffs(op)
        s = 0.5
        xi = np.array([s, 0.0, 0.0])
        u0 = MacroState(n=0.0, m=np.array([0.0, 1.0, 0.0]), q=0.0)
        times = np.linspace(0.0, 2.0, 5)
        traj = fluid_semigroup_V(basis, coeffs, u0, xi, times)
        expected = np.exp(-coeffs.kappa0 * s * s * times)
        assert np.max(np.abs(traj.norm_track - expected)) <= 1e-10, \
            "transverse decay off the closed form"
        states = nspf_mode_solve(basis, coeffs, u0, None, None, xi, times)
        for st, vec in zip(states, traj.states):
            i = basis.invariant_indices
            gap = max(abs(st.m_hat[1] - vec[i[2]]), abs(st.q_hat - vec[i[4]]))
            assert gap <= 1e-8, f"reduced system disagrees by {gap:.2e}"

    def prepared_data():
        grid = radial_grid(cfg.s_min, cfg.s_max, min(cfg.s_count, 8), cfg.s_spacing)
        data = make_initial_data("well_prepared", _profile(cfg), basis, grid)
        coeffs = _coeffs(op)
        osc = oscillation_part(data, coeffs, 0.3, cfg.eps_list[0])
        assert np.max(np.abs(osc)) <= 1e-12, "well-prepared data oscillates"
        norm = synth_norm_LinfP(basis, grid, data.profile)
        assert norm > 0.0, "empty synthesis"

    def table_determinism():
        grid = radial_grid(cfg.s_min, cfg.s_max, 4, cfg.s_spacing)
        data = make_initial_data(cfg.kind, _profile(cfg), basis, grid)
        eps3 = (list(cfg.eps_list) + [0.2, 0.1, 0.05])[:3]
        times = layer_time_grid(max(eps3), min(cfg.t_max, 5.0), 4, 6)
        one = run_convergence_study(op, data, eps3, times, _coeffs(op))
        two = run_convergence_study(op, data, eps3, times, _coeffs(op))
        assert np.array_equal(one.err_Linf_P, two.err_Linf_P), "rerun drifted"

    yield "basis orthonormality", basis_orthonormal
    yield "collision structure", collision_structure
    yield "mode dissipation", mode_dissipation
    yield "dispersion consistency", dispersion_consistency
    yield "transport coefficients", transport_positive
    yield "semigroup split", semigroup_split
    yield "fluid consistency", fluid_consistency
    yield "prepared data", prepared_data
    yield "table determinism", table_determinism


def run_check(cfg: ExperimentConfig) -> int:
    failures = 0
    t_start = time.perf_counter()
    for name, step in _check_steps(cfg):
        t0 = time.perf_counter()
        try:
            step()
        except AssertionError as exc:
            failures += 1
            print(f"FAIL {name}: {exc}")
        except VPBError as exc:
            failures += 1
            print(f"FAIL {name}: {type(exc).__name__}: {exc}")
        else:
            print(f"PASS {name} ({time.perf_counter() - t0:.2f}s)")
    total = time.perf_counter() - t_start
    print(f"{'FAILED' if failures else 'OK'} "
          f"({failures} failure(s), {total:.2f}s total)")
    return 1 if failures else 0


RUNNERS = {
    "check": run_check,
    "spectrum": run_spectrum,
    "dispersion": run_dispersion,
    "transport": run_transport,
    "semigroup": run_semigroup,
    "converge": run_converge,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vpb-spectral",
        description="Mode-by-mode spectral and diffusion-limit experiments")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", metavar="PATH", default=None,
                       help="key=value config file (defaults apply if omitted)")
        p.add_argument("--backend", default=None,
                       help="override the collision backend")
        p.add_argument("--jobs", type=int, default=None, metavar="N",
                       help="worker threads for parameter sweeps")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="artifact output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            cfg = parse_config(args.config)
        else:
            cfg = ExperimentConfig()
            validate_config(cfg, source="defaults")
        cfg = apply_overrides(cfg, backend=args.backend, jobs=args.jobs,
                              out_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return RUNNERS[args.subcommand](cfg)
    except VPBError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
