"""Command-line front end: config in, CSV tables, manifest and gnuplot script out."""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (choose_gamma, contraction_constant, contraction_constant_noncomp, energy_blowup_certificate,
                       envelope_rates, growth_rate_fit, moment_estimator, noncompensated_envelope_rates,
                       nonlinear_blowup, renewal_solve, upsilon,
                       upsilon_closed_form, upsilon_inverse)
from .config import ConfigError, ExperimentConfig, parse_config, serialize, with_overrides
from .errors import (BindingError, ConditionViolation, ConvergenceError, DomainError, EvaluationError,
                     IntegralDivergenceError, QuadratureError, ResolutionError)
from .kernels import c_star, green_function, stable_transition_density
from .noise import isometry_check, validate_conditions
from .solver import simulate_ensemble, simulate_path, worker_count
from .specfun import inv_subordinator_density, mittag_leffler, stable_density

__all__ = ["COMMANDS", "run_command", "main", "write_csv"]

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2

VALIDATION_ERRORS = (ConfigError, DomainError, ResolutionError, BindingError, ConditionViolation)
NUMERICAL_ERRORS = (ConvergenceError, QuadratureError, IntegralDivergenceError, EvaluationError,
                    FloatingPointError)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.17g}"
    return str(value)


def write_csv(path: Path, header: list, rows) -> None:
    """Header row, comma separated, 17 significant digits, '\\n' record terminator."""
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _linspace(lo: float, hi: float, n: int) -> np.ndarray:
    return np.linspace(lo, hi, n)


# --------------------------------------------------------------------------
# commands: each returns {file name: (header, rows)}, plot lines, summary
# --------------------------------------------------------------------------

def _cmd_ml(cfg: ExperimentConfig):
    o = cfg["ml"]
    beta = cfg["model"]["beta"]
    z = _linspace(o["z_min"], o["z_max"], o["points"])
    e = mittag_leffler(beta, z)
    rows = [(zi, ei) for zi, ei in zip(z, e)]
    plot = ["set xlabel 'z'; set ylabel 'E_beta(z)'",
            "plot 'ml.csv' using 1:2 with lines title 'E_beta'"]
    return {"ml.csv": (["z", "E_beta"], rows)}, plot, {"beta": beta}


def _cmd_density(cfg: ExperimentConfig):
    o = cfg["density"]
    params = cfg.model
    x = _linspace(o["x_min"], o["x_max"], o["points"])
    beta = params.beta
    if beta < 1:
        pos = x > 0
        g = np.full_like(x, np.nan)
        f = np.full_like(x, np.nan)
        g[pos] = stable_density(beta, x[pos])
        f[pos] = inv_subordinator_density(beta, o["t"], x[pos])
    else:
        g = np.full_like(x, np.nan)
        f = np.full_like(x, np.nan)
    if params.d == 1:
        p = stable_transition_density(params, o["t"], x)
    else:
        p = stable_transition_density(params, o["t"], np.stack([x, np.zeros_like(x)], axis=-1))
    rows = list(zip(x, g, f, p))
    plot = ["set xlabel 'x'",
            "plot 'density.csv' using 1:2 with lines title 'g_beta', "
            "'' using 1:3 with lines title 'f_Et', '' using 1:4 with lines title 'p_t'"]
    return ({"density.csv": (["x", "stable_density", "inv_subordinator_density", "transition_density"], rows)},
            plot, {"t": o["t"]})


def _cmd_kernel(cfg: ExperimentConfig):
    o = cfg["kernel"]
    params = cfg.model
    x = _linspace(o["x_min"], o["x_max"], o["points"])
    if params.d >= params.alpha:
        x = x[x > 0]
    pts = x if params.d == 1 else np.stack([x, np.zeros_like(x)], axis=-1)
    rows = []
    worst = 0.0
    for t in o["times"]:
        a = np.atleast_1d(green_function(params, t, pts, method="subordination"))
        b = np.atleast_1d(green_function(params, t, pts, method="spectral"))
        diff = np.abs(a - b)
        worst = max(worst, float(np.max(diff)))
        rows.extend((t, xi, ai, bi, di) for xi, ai, bi, di in zip(x, a, b, diff))
    plot = ["set xlabel 'x'; set ylabel 'G_t(x)'",
            "plot 'kernel.csv' using 2:3 with points title 'subordination', '' using 2:4 with lines title 'spectral'"]
    return ({"kernel.csv": (["t", "x", "G_subordination", "G_spectral", "abs_diff"], rows)}, plot,
            {"max_abs_diff": worst})


def _isometry_integrand(kind: str, c: float):
    if kind == "one":
        return lambda s, x, h: np.full(np.shape(s), c)
    if kind == "s_abs_h":
        return lambda s, x, h: c * s * np.linalg.norm(np.asarray(h).reshape(len(s), -1), axis=-1)
    return lambda s, x, h: c * np.cos(np.asarray(x).reshape(len(s), -1)[:, 0])


def _cmd_isometry(cfg: ExperimentConfig):
    o = cfg["isometry"]
    run = cfg["run"]
    mu = cfg.mu
    rep = isometry_check(_isometry_integrand(o["integrand"], o["constant"]), o["T"], o["half_width"], mu,
                         run["replicas"], run["seed"], d=cfg["model"]["d"])
    rows = rep.rows()
    plot = ["set style data histograms",
            "plot 'isometry.csv' using 2:xtic(1) title 'Monte Carlo', '' using 4 title 'quadrature'"]
    return ({"isometry.csv": (["quantity", "mc_estimate", "mc_stderr", "quadrature", "pass"], rows)}, plot,
            {"passed": rep.passed})


def _field_rows(grid, times, values):
    coords = grid.coordinates().reshape(-1, grid.d)
    for k, t in enumerate(times):
        flat = values[k].reshape(-1)
        for j in range(coords.shape[0]):
            yield (t, *coords[j], flat[j])


def _coord_header(d: int) -> list:
    return ["x"] if d == 1 else ["x1", "x2"]


def _cmd_simulate(cfg: ExperimentConfig):
    run = cfg["run"]
    params, grid = cfg.model, cfg.grid
    path = simulate_path(params, grid, cfg.initial_field(grid), cfg.sigma, cfg.mu, run["noise_kind"],
                         run["seed"], override=run["override"])
    header = ["t"] + _coord_header(grid.d) + ["u"]
    if grid.d == 1:
        plot = ["set xlabel 'x'; set ylabel 't'; set pm3d map",
                "splot 'simulate.csv' using 2:1:3 with pm3d title 'u(t,x)'"]
    else:
        plot = [f"set pm3d map; splot 'simulate.csv' every ::{grid.nt * grid.n * grid.n} using 2:3:4 "
                "with pm3d title 'u(T,x)'"]
    summary = {"exploded": path.exploded, "explosion_time": path.explosion_time}
    if path.exploded:
        summary["failure"] = "path exceeded the explosion guard"
    return {"simulate.csv": (header, list(_field_rows(grid, path.times, path.values)))}, plot, summary


def _cmd_moments(cfg: ExperimentConfig):
    run, o = cfg["run"], cfg["moments"]
    params, grid, sigma, mu = cfg.model, cfg.grid, cfg.sigma, cfg.mu
    u0 = cfg.initial_field(grid)
    ens = simulate_ensemble(params, grid, u0, sigma, mu, run["noise_kind"], run["seed"], run["replicas"],
                            override=run["override"])
    series = moment_estimator(ens, p=o["p"])
    T = grid.T
    window = (o["window_start"] if o["window_start"] >= 0 else T / 2, o["window_end"] if o["window_end"] > 0 else T)
    summary = {"window": list(window), "excluded": series.excluded, "p": o["p"]}
    rows_env = None
    if o["p"] == 2 and sigma.lip < math.inf:
        rep = validate_conditions(sigma, mu)
        rho = 1.0 - params.beta * params.d / params.alpha
        cs = c_star(params)
        fine = T * (np.arange(2001) / 2000.0) ** 2
        upper = renewal_solve(float(np.max(np.abs(u0))) ** 2, rep.K2 * sigma.lip ** 2 * cs, rho, fine)
        lower = renewal_solve(float(np.min(np.abs(u0))) ** 2, rep.kappa2 * sigma.L ** 2 * cs, rho, fine)
        up_t = np.interp(series.times, fine, upper.f)
        lo_t = np.interp(series.times, fine, lower.f)
        rows_env = (up_t, lo_t)
        summary["envelope_rates_asymptotic"] = envelope_rates(params, rep.K2, sigma.lip, rep.kappa2, sigma.L)
        for name, curve in (("upper", up_t), ("lower", lo_t)):
            if np.all(curve > 0):
                fit = growth_rate_fit((series.times, curve), window)
                summary[f"envelope_{name}_fitted_rate"] = fit.rate
    for which in ("sup", "mean", "inf"):
        try:
            fit = growth_rate_fit(series, window, which=which)
            summary[f"fit_{which}"] = {"rate": fit.rate, "halfwidth": fit.halfwidth, "positive": fit.positive}
        except (DomainError, EvaluationError) as exc:
            summary[f"fit_{which}"] = {"error": str(exc)}
    if run["noise_kind"] == "noncompensated" and sigma.J_bar is not None:
        rep = validate_conditions(sigma, mu)
        if rep.kappa1 > 0 and sigma.L > 0:
            summary["noncompensated_lower_rates"] = noncompensated_envelope_rates(params, rep.kappa1, sigma.L)
    header = ["t", "sup_moment", "stderr", "inf_moment", "inf_stderr", "mean_moment", "mean_stderr"]
    rows = []
    for k, t in enumerate(series.times):
        row = [t, series.sup_moment[k], series.stderr[k], series.inf_moment[k], series.inf_stderr[k],
               series.mean_moment[k], series.mean_stderr[k]]
        if rows_env is not None:
            row += [rows_env[1][k], rows_env[0][k]]
        rows.append(row)
    if rows_env is not None:
        header += ["lower_envelope", "upper_envelope"]
    plot = ["set logscale y; set xlabel 't'",
            "plot 'moments.csv' using 1:2:3 with yerrorbars title 'sup moment', '' using 1:6 with lines title 'mean'"
            + (", '' using 1:8 with lines title 'lower envelope', '' using 1:9 with lines title 'upper envelope'"
               if rows_env is not None else "")]
    if series.excluded:
        summary["failure"] = f"{series.excluded} exploded replicas excluded"
    return {"moments.csv": (header, rows)}, plot, summary


def _cmd_bounds(cfg: ExperimentConfig):
    params, sigma, mu = cfg.model, cfg.sigma, cfg.mu
    o = cfg["bounds"]
    rep = validate_conditions(sigma, mu)
    cs = c_star(params)
    rows = [("c_star", cs), ("K2", rep.K2), ("K1", rep.K1), ("kappa2", rep.kappa2), ("kappa1", rep.kappa1),
            ("lip", sigma.lip), ("L", sigma.L)]
    rows += [(f"flag_{k}", bool(v)) for k, v in sorted(rep.flags.items())]
    if math.isfinite(sigma.lip) and sigma.lip > 0 and rep.K2 > 0:
        for form in ("printed", "derived"):
            rows.append((f"contraction_{form}_at_gamma", contraction_constant(params, rep.K2, sigma.lip, o["gamma"],
                                                                              form=form)))
            rows.append((f"gamma_{form}", choose_gamma(params, rep.K2, sigma.lip, o["target"], form=form)))
        rows.append(("contraction_noncompensated_at_gamma", contraction_constant_noncomp(rep.K1, sigma.lip, o["gamma"])))
        rates = envelope_rates(params, rep.K2, sigma.lip, rep.kappa2, sigma.L)
        rows += [(f"envelope_{k}", v) for k, v in rates.items()]
    plot = ["set style data histograms", "plot 'bounds.csv' using 2:xtic(1) title 'value'"]
    return {"bounds.csv": (["quantity", "value"], rows)}, plot, {}


def _cmd_upsilon(cfg: ExperimentConfig):
    params = cfg.model
    o = cfg["upsilon"]
    g = np.geomspace(o["gamma_min"], o["gamma_max"], o["points"])
    rows = [(gi, upsilon(params.alpha, params.nu, params.d, gi),
             upsilon_closed_form(params.alpha, params.nu, params.d, gi)) for gi in g]
    target = 1.0 / (o["kappa"] * o["L"] ** 2)
    inv = upsilon_inverse(params.alpha, params.nu, params.d, target)
    plot = ["set logscale xy; set xlabel 'gamma'",
            "plot 'upsilon.csv' using 1:2 with lines title 'Upsilon', '' using 1:3 with points title 'closed form'"]
    return ({"upsilon.csv": (["gamma", "upsilon", "upsilon_closed_form"], rows)}, plot,
            {"upsilon_inverse_target": target, "upsilon_inverse": inv})


def _cmd_blowup(cfg: ExperimentConfig):
    params = cfg.model
    o = cfg["blowup"]
    rep = energy_blowup_certificate(params, o["kappa"], o["L"], o["rho"], o["eta"])
    t = o["t_max"] * np.linspace(0.0, 1.0, o["steps"] + 1)
    est = nonlinear_blowup(o["C"], o["D"], o["gamma_exp"], o["theta"], t)
    rows = [("C1", rep.C1), ("theta0", rep.theta0), ("theta0_printed", rep.theta0_printed),
            ("A_at_theta0", rep.A_at_theta0), ("A_below", rep.below_A), ("below_diverged", rep.below_diverged),
            ("below_steps", rep.below_steps), ("A_above", rep.above_A), ("above_diverged", rep.above_diverged),
            ("above_limit", rep.above_limit), ("certified", rep.certified),
            ("blowup_time", est.time if est is not None else math.nan),
            ("blowup_coarse_time", est.coarse_time if est is not None else math.nan)]
    plot = ["set style data histograms", "plot 'blowup.csv' using 2:xtic(1) title 'value'"]
    summary = {"certified": rep.certified, "blowup_reason": est.reason if est is not None else "none"}
    if not rep.certified:
        summary["failure"] = "blow-up certificate not established"
    return {"blowup.csv": (["quantity", "value"], rows)}, plot, summary


COMMANDS = {
    "kernel": _cmd_kernel,
    "ml": _cmd_ml,
    "density": _cmd_density,
    "isometry": _cmd_isometry,
    "simulate": _cmd_simulate,
    "moments": _cmd_moments,
    "bounds": _cmd_bounds,
    "upsilon": _cmd_upsilon,
    "blowup": _cmd_blowup,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def run_command(cmd: str, cfg: ExperimentConfig, out_dir, raise_errors: bool = False) -> int:
    """Run ``cmd`` and write CSVs, ``config.ini``, ``manifest.json`` and ``plot.gp`` to ``out_dir``.

    Returns 0 on success, 1 on validation failure, 2 on numerical failure.
    """
    if cmd not in COMMANDS:
        print(f"error: unknown command {cmd!r}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    status, error = EXIT_OK, None
    tables, plot, summary = {}, [], {}
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            tables, plot, summary = COMMANDS[cmd](cfg)
        if "failure" in summary:
            status, error = EXIT_NUMERICAL, summary["failure"]
    except VALIDATION_ERRORS as exc:
        if raise_errors:
            raise
        status, error = EXIT_VALIDATION, f"{type(exc).__name__}: {exc}"
    except NUMERICAL_ERRORS as exc:
        if raise_errors:
            raise
        status, error = EXIT_NUMERICAL, f"{type(exc).__name__}: {exc}"
    files = {}
    for name, (header, rows) in tables.items():
        write_csv(out / name, header, rows)
        files[name] = hashlib.sha256((out / name).read_bytes()).hexdigest()
    text = serialize(cfg)
    (out / "config.ini").write_text(text, encoding="ascii")
    (out / "plot.gp").write_text("\n".join(["set datafile separator ','", "set key autotitle columnhead"] + plot)
                                 + "\n", encoding="ascii")
    manifest = {
        "command": cmd,
        "exit_status": status,
        "error": error,
        "config": cfg.values,
        "config_text": text,
        "seed": cfg["run"]["seed"],
        "replicas": cfg["run"]["replicas"],
        "threads": worker_count(),
        "versions": {"fracspde": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "wall_time_seconds": time.perf_counter() - start,
        "files": files,
        "summary": summary,
    }
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n",
                                       encoding="ascii")
    if error:
        print(f"error: {error}", file=sys.stderr)
    return status


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracspde",
                                     description="Time-fractional SPDE with Poisson noise: kernels, simulation, bounds.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="INI configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides run.seed)")
        p.add_argument("--replicas", type=int, default=None, help="replica count (overrides run.replicas)")
    p = sub.add_parser("rerun", help="repeat an experiment from its manifest.json")
    p.add_argument("manifest", help="path to manifest.json")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "rerun":
            manifest = json.loads(Path(args.manifest).read_text())
            cmd, cfg = manifest["command"], parse_config(manifest["config_text"])
        else:
            cmd = args.command
            cfg = with_overrides(parse_config(Path(args.config).read_text()), args.seed, args.replicas)
    except (ConfigError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return run_command(cmd, cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
