"""Configuration-driven command-line front end.

Subcommands:

* ``solve <cfg>``     -- one CG/PCG/deflated-CG solve on a dense or
  generated matrix, emitting the trace as CSV + JSON.
* ``da-run <cfg>``    -- the full method comparison on an identical
  twin-experiment problem, one CSV per method plus a summary JSON.
* ``spectrum <cfg>``  -- eigenvalues (or Ritz estimates) of the
  second-loop preconditioned operator for a set of scaling parameters.
* ``report <dir>``    -- render figures from previously emitted CSVs.

Config files are flat ``key = value`` text with ``[section]`` headers.
Exit codes: 0 success, 1 configuration error, 2 solver breakdown,
3 partial method failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import configparser

import numpy as np

from . import __version__
from .daharness import (
    METHODS,
    assemble_system,
    make_gn_state,
    normalize_method,
    run_gauss_newton,
    synthesize_truth_and_obs,
)
from .krylov import (
    KrylovConfig,
    cg,
    deflated_cg,
    extract_ritz_pairs,
    pcg,
    BreakdownError,
)
from .linops import (
    LinearOperator,
    NotSpdError,
    dense_eig,
    direct_solve,
    load_matrix_text,
)
from .slmp import ScaledSpectralPreconditioner, SpectralBasis, resolve_theta

OUTPUT_DIR_ENV = "SLMPCG_OUT"
DENSE_SPECTRUM_CAP = 2000


class ConfigError(ValueError):
    """The configuration file is missing, malformed or inconsistent."""


_SCENARIO_OBS = {"LowObs": 150, "HighObs": 300}


@dataclass
class ExperimentConfig:
    """Twin-experiment configuration; defaults reproduce the reference
    setup (n=1000, two windows, sigma_b=0.8, sigma_r=0.2, 100 inner
    iterations, 2 outer loops, Ritz tolerance 1e-3, 150 observations per
    window for LowObs / 300 for HighObs)."""

    scenario: str = "LowObs"
    n: int = 1000
    m_per_window: int = 150
    n_windows: int = 2
    sigma_b: float = 0.8
    sigma_r: float = 0.2
    inner_iters: int = 100
    outer_loops: int = 2
    eps_ritz: float = 1e-3
    seed: int = 5
    methods: tuple = METHODS
    output_dir: str = "out"
    forcing: float = 8.0
    dt: float = 0.025
    steps_per_window: int = 2
    length_scale: float = 5.0
    burn_in_steps: int = 500
    ritz_max: int | None = None
    ritz_value_floor: float = 1.1


def _read_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parser


def _coerce(value, target_type, key):
    try:
        if target_type is int:
            return int(value)
        if target_type is float:
            return float(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def experiment_from_config(parser):
    """Build an :class:`ExperimentConfig` from the [experiment] section."""
    cfg = ExperimentConfig()
    if not parser.has_section("experiment"):
        return cfg
    known = {f.name: f for f in fields(ExperimentConfig)}
    for key, value in parser.items("experiment"):
        if key not in known:
            raise ConfigError(f"unknown [experiment] key: {key}")
        if key == "methods":
            try:
                methods = tuple(
                    normalize_method(m) for m in value.split(",") if m.strip()
                )
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            if not methods:
                raise ConfigError("methods list is empty")
            setattr(cfg, key, methods)
        elif key == "scenario":
            if value not in ("LowObs", "HighObs", "custom"):
                raise ConfigError(f"unknown scenario {value!r}")
            cfg.scenario = value
            if value in _SCENARIO_OBS:
                cfg.m_per_window = _SCENARIO_OBS[value]
        elif key == "ritz_max":
            cfg.ritz_max = None if value.lower() == "none" else _coerce(value, int, key)
        elif key == "output_dir":
            cfg.output_dir = value
        else:
            current = getattr(cfg, key)
            setattr(cfg, key, _coerce(value, type(current), key))
    if parser.has_section("experiment") and "scenario" in dict(parser.items("experiment")):
        # scenario presets are applied first; explicit m_per_window wins
        items = dict(parser.items("experiment"))
        if "m_per_window" in items:
            cfg.m_per_window = _coerce(items["m_per_window"], int, "m_per_window")
    return cfg


def config_hash(cfg):
    payload = repr(sorted((f.name, getattr(cfg, f.name)) for f in fields(cfg)))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _resolve_outdir(cfg_outdir, cli_out):
    if cli_out:
        out = cli_out
    elif os.environ.get(OUTPUT_DIR_ENV):
        out = os.environ[OUTPUT_DIR_ENV]
    else:
        out = cfg_outdir
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _synthesize(cfg):
    return synthesize_truth_and_obs(
        n=cfg.n,
        m_per_window=cfg.m_per_window,
        n_windows=cfg.n_windows,
        sigma_b=cfg.sigma_b,
        sigma_r=cfg.sigma_r,
        seed=cfg.seed,
        forcing=cfg.forcing,
        dt=cfg.dt,
        steps_per_window=cfg.steps_per_window,
        length_scale=cfg.length_scale,
        burn_in_steps=cfg.burn_in_steps,
    )


# ---------------------------------------------------------------------------
# solve


def _parse_matrix(spec, base_dir):
    spec = spec.strip()
    if spec.startswith("identity:"):
        n = int(spec.split(":", 1)[1])
        return np.eye(n)
    if spec.startswith("diag:"):
        entries = [float(x) for x in spec.split(":", 1)[1].split(",")]
        return np.diag(entries)
    if spec.startswith("random_spd:"):
        parts = spec.split(":")
        n, seed = int(parts[1]), int(parts[2])
        cond = float(parts[3]) if len(parts) > 3 else 100.0
        rng = np.random.default_rng(seed)
        values = np.exp(np.linspace(np.log(cond), 0.0, n))
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        A = (Q * values) @ Q.T
        return 0.5 * (A + A.T)
    path = Path(spec)
    if not path.is_absolute():
        path = base_dir / path
    if not path.is_file():
        raise ConfigError(f"matrix file not found: {path}")
    return load_matrix_text(path)


def _parse_vector(spec, n, rhs=True):
    spec = spec.strip()
    if spec == "ones":
        return np.ones(n)
    if spec == "zeros":
        return np.zeros(n)
    if spec.startswith("randn:"):
        rng = np.random.default_rng(int(spec.split(":", 1)[1]))
        return rng.standard_normal(n)
    try:
        vec = np.array([float(x) for x in spec.split(",")])
    except ValueError as exc:
        raise ConfigError(f"bad vector spec: {spec!r}") from exc
    if vec.shape[0] != n:
        raise ConfigError(f"vector spec has length {vec.shape[0]}, expected {n}")
    return vec


def cmd_solve(cfg_path, out=None):
    parser = _read_config(cfg_path)
    if not parser.has_section("solve"):
        raise ConfigError("missing [solve] section")
    section = dict(parser.items("solve"))
    outdir = _resolve_outdir(section.pop("output_dir", "out"), out)
    base_dir = Path(cfg_path).resolve().parent

    A_dense = _parse_matrix(section.pop("matrix", ""), base_dir)
    n = A_dense.shape[0]
    b = _parse_vector(section.pop("rhs", "ones"), n)
    x0 = _parse_vector(section.pop("x0", "zeros"), n, rhs=False)
    method = section.pop("method", "cg").lower()
    max_iters = int(section.pop("max_iters", n))
    rtol = float(section.pop("rtol", 0.0))
    k = int(section.pop("k", 0))
    theta_spec = section.pop("theta", "1.0")
    if section:
        raise ConfigError(f"unknown [solve] keys: {sorted(section)}")

    A_op = LinearOperator.from_dense(A_dense, label="A1")
    cfg = KrylovConfig(max_iters=max_iters, rtol=rtol)

    # dense oracle for the energy-error column
    try:
        x_star = direct_solve(A_dense, b)

        def error_oracle(x):
            d = x_star - x
            return float(np.sqrt(max(d @ (A_dense @ d), 0.0)))

    except NotSpdError:
        error_oracle = None  # indefinite input: let the solver report breakdown

    try:
        if method == "cg":
            trace = cg(A_op, b, x0, cfg, error_oracle=error_oracle)
        elif method == "pcg":
            eig = dense_eig(A_dense)
            basis = SpectralBasis(eig.vectors[:, :k], eig.values[:k])
            try:
                theta = float(theta_spec)
            except ValueError:
                theta = resolve_theta(
                    theta_spec,
                    basis,
                    A_prev=A_op,
                    r0=b - A_dense @ x0,
                    lambda_n_hint=float(eig.values[-1]),
                )
            print(f"theta={theta:.17g}")
            prec = ScaledSpectralPreconditioner(basis, theta)
            trace = pcg(A_op, prec, b, x0, cfg, error_oracle=error_oracle)
        elif method in ("deflated-cg", "deflated_cg"):
            eig = dense_eig(A_dense)
            trace = deflated_cg(
                A_op, eig.vectors[:, :k], b, x0, cfg, error_oracle=error_oracle
            )
        else:
            raise ConfigError(f"unknown solve method {method!r}")
    except (NotSpdError, BreakdownError) as exc:
        print(f"breakdown: {exc}", file=sys.stderr)
        return 2

    trace.to_csv(outdir / "trace.csv")
    trace.to_json(outdir / "trace.json")
    if trace.termination_reason == "breakdown":
        print("breakdown: non-positive curvature encountered", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# da-run


RESULT_HEADER = (
    "method,outer_loop,inner_iter,quadratic_cost,residual_norm,"
    "matvec_A1,matvec_A2,theta_used"
)


def _write_method_csv(path, run):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(RESULT_HEADER + "\n")
        for loop_idx, (trace, costs) in enumerate(
            zip(run.traces, run.quadratic_costs), start=1
        ):
            theta = run.thetas[loop_idx - 1]
            theta_str = "" if theta is None else f"{theta:.17g}"
            for ell in range(trace.terminated_at + 1):
                counts = trace.matvec_counts[ell]
                fh.write(
                    f"{run.method},{loop_idx},{ell},"
                    f"{costs[ell]:.17g},{trace.residual_norms[ell]:.17g},"
                    f"{counts.get('A1', '')},{counts.get('A2', '')},"
                    f"{theta_str}\n"
                )


def cmd_da_run(cfg_path, out=None):
    parser = _read_config(cfg_path)
    cfg = experiment_from_config(parser)
    outdir = _resolve_outdir(cfg.output_dir, out)

    prob = _synthesize(cfg)
    summary = {
        "version": __version__,
        "seed": cfg.seed,
        "scenario": cfg.scenario,
        "config_hash": config_hash(cfg),
        "selected_pairs": {},
        "theta": {},
        "final_quadratic_cost": {},
        "final_nonlinear_cost": {},
        "failed": {},
        "files": [],
    }
    exit_code = 0
    for method in cfg.methods:
        try:
            run = run_gauss_newton(
                prob,
                method,
                outer_loops=cfg.outer_loops,
                inner_iters=cfg.inner_iters,
                eps_ritz=cfg.eps_ritz,
                ritz_max=cfg.ritz_max,
                ritz_value_floor=cfg.ritz_value_floor,
            )
        except Exception as exc:  # keep going: other methods still complete
            print(f"method {method} failed: {exc}", file=sys.stderr)
            summary["failed"][method] = str(exc)
            exit_code = 3
            continue
        path = outdir / f"{run.method}.csv"
        _write_method_csv(path, run)
        summary["files"].append(path.name)
        summary["selected_pairs"][run.method] = run.selected_pairs
        thetas = [t for t in run.thetas if t is not None]
        if thetas:
            summary["theta"][run.method] = thetas[-1]
            print(f"theta[{run.method}]={thetas[-1]:.17g}")
        summary["final_quadratic_cost"][run.method] = run.quadratic_costs[-1][-1]
        summary["final_nonlinear_cost"][run.method] = run.nonlinear_costs[-1]
    with open(outdir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return exit_code


# ---------------------------------------------------------------------------
# spectrum


_THETA_CHOICES = ("one", "lambda_k", "theta_r", "theta_m")


def _densify(op):
    n = op.dim
    cols = np.empty((n, n))
    basis_vec = np.zeros(n)
    for j in range(n):
        basis_vec[j] = 1.0
        cols[:, j] = op(basis_vec)
        basis_vec[j] = 0.0
    return 0.5 * (cols + cols.T)


def cmd_spectrum(cfg_path, out=None):
    parser = _read_config(cfg_path)
    cfg = experiment_from_config(parser)
    outdir = _resolve_outdir(cfg.output_dir, out)
    section = dict(parser.items("spectrum")) if parser.has_section("spectrum") else {}
    theta_specs = [
        t.strip() for t in section.get("thetas", ",".join(_THETA_CHOICES)).split(",")
        if t.strip()
    ]
    mode = section.get("mode", "dense")
    if mode not in ("dense", "ritz"):
        raise ConfigError(f"unknown spectrum mode {mode!r}")
    if mode == "dense" and cfg.n > DENSE_SPECTRUM_CAP:
        print(
            f"dense spectrum needs n <= {DENSE_SPECTRUM_CAP}, got {cfg.n}; "
            "set mode = ritz",
            file=sys.stderr,
        )
        return 1

    prob = _synthesize(cfg)
    n = prob.model.n

    # first loop: plain CG + Ritz extraction, then linearize the second loop
    state1 = make_gn_state(prob, prob.w_b, 1)
    A1, b1 = assemble_system(state1)
    kcfg = KrylovConfig(max_iters=cfg.inner_iters, rtol=0.0, record_lanczos=True)
    trace1 = cg(A1, b1, np.zeros(n), kcfg)
    pairs = extract_ritz_pairs(trace1.lanczos, eps=cfg.eps_ritz, k_max=cfg.ritz_max)
    keep = pairs.values > cfg.ritz_value_floor
    basis = SpectralBasis(pairs.vectors[:, keep], pairs.values[keep])
    print(f"selected_pairs={basis.k}")

    w0_2 = prob.w_b + prob.bcov.root @ trace1.solution
    state2 = make_gn_state(prob, w0_2, 2)
    A2, b2 = assemble_system(state2)

    columns = {}
    for spec in theta_specs:
        try:
            theta = float(spec)
            label = f"theta_{spec}"
        except ValueError:
            if spec not in _THETA_CHOICES:
                raise ConfigError(f"unknown theta choice {spec!r}")
            label = f"theta_{spec}"
            if spec == "theta_m":
                theta = resolve_theta("mid_range", basis, lambda_n_hint=1.0)
            elif spec == "theta_r":
                theta = resolve_theta("theta_r", basis, A_prev=A1, r0=b2)
            elif spec == "lambda_k":
                theta = resolve_theta("lambda_k", basis)
            else:
                theta = 1.0
        print(f"{label}={theta:.17g}")
        if basis.k == 0:
            split = A2
        else:
            prec = ScaledSpectralPreconditioner(basis, theta)
            split = LinearOperator(
                n,
                lambda v, A=A2, p=prec: p.apply_U(A(p.apply_U(v))),
                label="M2",
            )
        if mode == "dense":
            eig = np.linalg.eigvalsh(_densify(split))[::-1]
            columns[label] = eig
        else:
            rhs = b2 if basis.k == 0 else prec.apply_U(b2)
            t = cg(split, rhs, np.zeros(n), kcfg)
            rp = extract_ritz_pairs(t.lanczos, eps=cfg.eps_ritz)
            columns[label] = rp.values

    width = max(len(c) for c in columns.values())
    path = outdir / "spectrum.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(columns.keys()) + "\n")
        for i in range(width):
            row = [
                f"{col[i]:.17g}" if i < len(col) else ""
                for col in columns.values()
            ]
            fh.write(",".join(row) + "\n")
    return 0


# ---------------------------------------------------------------------------
# report


def cmd_report(results_dir, out=None):
    from . import report

    results_dir = Path(results_dir)
    if not results_dir.is_dir():
        raise ConfigError(f"results directory not found: {results_dir}")
    outdir = Path(out) if out else results_dir
    outdir.mkdir(parents=True, exist_ok=True)
    written = report.render_all(results_dir, outdir)
    if not written:
        print("no CSV results found to render", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


# ---------------------------------------------------------------------------
# entry point


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="slmpcg",
        description="Sequences of SPD solves with scaled spectral "
        "limited-memory preconditioning.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run a single configured solve")
    p_solve.add_argument("config")
    p_solve.add_argument("--out", default=None, help="override output directory")

    p_da = sub.add_parser("da-run", help="run the assimilation method comparison")
    p_da.add_argument("config")
    p_da.add_argument("--out", default=None)

    p_spec = sub.add_parser("spectrum", help="dump preconditioned spectra")
    p_spec.add_argument("config")
    p_spec.add_argument("--out", default=None)

    p_rep = sub.add_parser("report", help="render figures from emitted CSVs")
    p_rep.add_argument("results_dir")
    p_rep.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "solve":
            return cmd_solve(args.config, args.out)
        if args.command == "da-run":
            return cmd_da_run(args.config, args.out)
        if args.command == "spectrum":
            return cmd_spectrum(args.config, args.out)
        return cmd_report(args.results_dir, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
