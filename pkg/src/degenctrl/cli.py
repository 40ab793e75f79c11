"""Experiment harness: declarative configs in, machine-readable reports out.

Config format: one assignment per line, dotted section paths, ``#``
comments.  Example::

    problem.T = 1.0
    problem.omega = 0.3, 0.8
    problem.alpha = 0.5
    disc.N = 128
    disc.M = 256
    weights.n = 1e4
    run.seed = 0

Invocation: ``degenctrl <experiment> --config <path> [--out <dir>]
[--seed <int>] [--strict]``.  Exit codes: 0 pass, 1 assertion failure,
2 config error, 3 numerical error.  ``summary.json`` is byte-identical
across runs with the same config and seed, so wall time is reported on
stderr only.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import carleman as carleman_mod
from . import coeffs as coeffs_mod
from . import control as control_mod
from . import solver as solver_mod
from . import weights as weights_mod
from .discretization import (eigenbasis, make_grid, make_time_grid, node_mask,
                             discrete_norm)
from .errors import ConfigError, DegenctrlError, NumericalError

__all__ = ["ExperimentConfig", "RunReport", "parse_config", "run_experiment",
           "emit_report", "main", "EXPERIMENTS"]


@dataclass
class ExperimentConfig:
    """Parsed key/value config with line anchors for error messages."""

    entries: dict                      # key -> value (string)
    lines: dict                        # key -> line number
    text: str = ""

    def get(self, key, default=None, cast=str, required=False):
        if key not in self.entries:
            if required:
                raise ConfigError(f"missing required key {key!r}")
            return default
        raw = self.entries[key]
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"key {key!r}: {exc}", self.lines[key]) from exc

    def get_float(self, key, default=None, required=False, positive=False):
        v = self.get(key, default, cast=float, required=required)
        if v is not None and positive and v <= 0:
            raise ConfigError(f"key {key!r} must be positive, got {v}",
                              self.lines.get(key))
        return v

    def get_int(self, key, default=None, required=False, positive=False):
        v = self.get(key, default, cast=lambda s: int(float(s)), required=required)
        if v is not None and positive and v <= 0:
            raise ConfigError(f"key {key!r} must be positive, got {v}",
                              self.lines.get(key))
        return v

    def get_pair(self, key, default=None):
        if key not in self.entries:
            return default
        raw = self.entries[key]
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"key {key!r} needs two comma-separated values",
                              self.lines[key])
        try:
            return (float(parts[0]), float(parts[1]))
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: {exc}", self.lines[key]) from exc

    def get_list(self, key, default=None):
        if key not in self.entries:
            return default
        try:
            return [float(p) for p in self.entries[key].split(",") if p.strip()]
        except ValueError as exc:
            raise ConfigError(f"key {key!r}: {exc}", self.lines[key]) from exc


def parse_config(text: str) -> ExperimentConfig:
    entries = {}
    lines = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw!r}", no)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", no)
        if key in entries:
            raise ConfigError(f"duplicate key {key!r}", no)
        entries[key] = value
        lines[key] = no
    return ExperimentConfig(entries=entries, lines=lines, text=text)


@dataclass
class RunReport:
    experiment: str
    config_echo: str
    metrics: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)     # name -> list of dict rows
    assertions: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def passed(self):
        return all(self.assertions.values())


# ---------------------------------------------------------------------------
# problem construction from config
# ---------------------------------------------------------------------------

DEFAULTS = {"T": 1.0, "omega": (0.3, 0.8), "omega1": (0.45, 0.65),
            "omega_prime": (0.4, 0.7), "alpha": 0.5, "N": 128, "M": 256}


def _initial_profile(spec_str, x, line_no=None):
    name, _, arg = spec_str.partition(":")
    amp = float(arg) if arg else 1.0
    if name == "zero":
        return np.zeros_like(x)
    if name == "sinpi":
        return amp * np.sin(np.pi * x)
    if name == "sin2pi":
        return amp * np.sin(2 * np.pi * x)
    if name == "parabola":
        return amp * 4.0 * x * (1.0 - x)
    raise ConfigError(f"unknown initial profile {spec_str!r}", line_no)


def _factor_from(spec_str, line_no=None):
    name, _, arg = spec_str.partition(":")
    if name == "one":
        return coeffs_mod.constant_factor()
    if name == "affine":
        return coeffs_mod.affine_factor(float(arg))
    raise ConfigError(f"unknown nonlocal factor {spec_str!r}", line_no)


def _reactions_from(spec_str, line_no=None):
    name, _, arg = spec_str.partition(":")
    try:
        vals = [float(p) for p in arg.split(",")] if arg else [0.0, 0.0, 1.0, 0.0]
        if len(vals) != 4:
            raise ValueError("need four coefficients b11,b12,b21,b22")
    except ValueError as exc:
        raise ConfigError(f"reactions {spec_str!r}: {exc}", line_no) from exc
    if name == "linear":
        return coeffs_mod.linear_reactions(*vals)
    if name == "tanh":
        return coeffs_mod.tanh_reactions(*vals)
    raise ConfigError(f"unknown reactions {spec_str!r}", line_no)


def build_problem(cfg: ExperimentConfig):
    geo = coeffs_mod.ControlGeometry(
        T=cfg.get_float("problem.T", DEFAULTS["T"], positive=True),
        omega=cfg.get_pair("problem.omega", DEFAULTS["omega"]),
        omega1=cfg.get_pair("problem.omega1", DEFAULTS["omega1"]),
        omega_prime=cfg.get_pair("problem.omega_prime", DEFAULTS["omega_prime"]))
    table = cfg.get("problem.a_table")
    if table:
        pts = [p.split(":") for p in table.split(";") if p.strip()]
        xs = [float(p[0]) for p in pts]
        vs = [float(p[1]) for p in pts]
        coefficient = coeffs_mod.tabulated_coefficient(xs, vs)
    else:
        coefficient = coeffs_mod.power_law_coefficient(
            cfg.get_float("problem.alpha", DEFAULTS["alpha"]))
    N = cfg.get_int("disc.N", DEFAULTS["N"], positive=True)
    M = cfg.get_int("disc.M", DEFAULTS["M"], positive=True)
    grid = make_grid(N, coefficient)
    tgrid = make_time_grid(geo.T, M)
    scale = cfg.get_float("problem.scale", 1.0)
    spec = coeffs_mod.ProblemSpec(
        geometry=geo, coefficient=coefficient,
        factors=(_factor_from(cfg.get("problem.ell1", "one"),
                              cfg.lines.get("problem.ell1")),
                 _factor_from(cfg.get("problem.ell2", "one"),
                              cfg.lines.get("problem.ell2"))),
        reactions=_reactions_from(cfg.get("problem.reactions", "linear:0,0,1,0"),
                                  cfg.lines.get("problem.reactions")),
        u0=scale * _initial_profile(cfg.get("problem.u0", "sinpi"), grid.x,
                                    cfg.lines.get("problem.u0")),
        v0=scale * _initial_profile(cfg.get("problem.v0", "sinpi:0.5"), grid.x,
                                    cfg.lines.get("problem.v0")))
    return spec, grid, tgrid


def build_weights(cfg: ExperimentConfig, spec, grid, tgrid):
    lam_raw = cfg.get("weights.lam", "auto")
    lam = None if lam_raw == "auto" else float(lam_raw)
    w = weights_mod.build_carleman_weights(
        spec.coefficient, spec.geometry.omega_prime, spec.geometry.T,
        lam=lam, quad_nodes=cfg.get_int("weights.quad_nodes", 1024))
    s_raw = cfg.get("weights.s", "auto:40")
    if isinstance(s_raw, str) and s_raw.startswith("auto"):
        _, _, cap = s_raw.partition(":")
        cap = float(cap) if cap else 40.0
        sched = cfg.get_list("weights.schedule")
        n_ref = max(sched) if sched else cfg.get_float("weights.n", 1e4)
        s = weights_mod.suggest_s(w, tgrid, n=n_ref, cap=cap)
    else:
        s = float(s_raw)
    return w.with_s(s)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _exp_wellposed(cfg, rng, report):
    spec, grid, tgrid = build_problem(cfg)
    res = solver_mod.nonlinear_forward_solve(spec, None, grid, tgrid)
    fac1, fac2 = spec.factors
    ell0 = min(fac1.lower or 1.0, fac2.lower or 1.0)
    L1 = max(fac1.upper or 1.0, fac2.upper or 1.0)
    L2 = max(fac1.deriv_bound, fac2.deriv_bound)
    checks = {}
    for which in ("E1", "E2", "E3"):
        rep = solver_mod.energy_checks(res, which, C0=spec.reactions.growth_const,
                                       ell_lower=ell0, ell_upper=L1,
                                       deriv_bound=L2)
        checks[which] = rep
        report.metrics[f"{which}_lhs"] = rep.lhs
        report.metrics[f"{which}_rhs"] = rep.rhs
        report.metrics[f"{which}_ratio"] = rep.ratio
        report.assertions[f"{which}_holds"] = rep.passed
    report.metrics["final_norm"] = res.final_norm()
    report.series["energy"] = [
        {"t": float(t), "l2": float(n)}
        for t, n in zip(tgrid.t, [math.sqrt(discrete_norm(res.u.values[k], "l2", grid) ** 2
                                            + discrete_norm(res.v.values[k], "l2", grid) ** 2)
                                  for k in range(tgrid.M + 1)])]


def _exp_weights_audit(cfg, rng, report):
    spec, grid, tgrid = build_problem(cfg)
    w = build_weights(cfg, spec, grid, tgrid)
    T = spec.geometry.T
    t_probe = np.linspace(0.0, T, 65)[:-1]
    x_probe = np.linspace(0.0, 1.0, 64)

    afac = w.spatial.a_factor(x_probe)
    beta = w.spatial.beta(x_probe)
    eta = w.spatial.eta(x_probe)
    tau = w.temporal.tau(t_probe)
    A = np.outer(tau, afac)
    neg_beta_zeta = -np.outer(tau, beta * eta)
    ident_A = float(np.max(np.abs(A - neg_beta_zeta)
                           / np.maximum(np.abs(A), 1e-300)))
    report.metrics["identity_A_eq_minus_beta_zeta"] = ident_A
    report.assertions["A_identity"] = ident_A < 1e-12

    fam = w.rho_family()
    lr, l0, lh, ls = fam.logs(t_probe[:, None], x_probe[None, :])
    ident_rho = float(np.max(np.abs(2.0 * lh - (l0 + ls))
                             / np.maximum(np.abs(2.0 * lh), 1.0)))
    report.metrics["identity_rho_hat_sq"] = ident_rho
    report.assertions["rho_identity"] = ident_rho < 1e-12

    ts = np.linspace(0.0, T, 4097)
    m = w.temporal.m(ts)
    base = (ts * (T - ts)) ** 4
    late = ts >= T / 2
    report.assertions["m_lower_bound"] = bool(np.all(m >= base))
    report.assertions["m_equal_late"] = bool(np.all(m[late] == base[late]))
    report.assertions["m0_positive"] = w.temporal.m0 > 0
    rows = []
    for n in cfg.get_list("weights.n_list", [1e2, 1e4, 1e6]):
        rw = weights_mod.RegularizedWeights(weights=w, n=n,
                                            omega=spec.geometry.omega)
        rep = weights_mod.weight_bounds_check(rw, t_probe, x_probe)
        report.assertions[f"lemma_sandwich_n_{int(n):d}"] = rep.passed
        rows.append({"n": n, "log_min_rho0n": rep.components["log_min_rho0n"],
                     "log_max_rho0n": rep.components["log_max_rho0n"],
                     "passed": rep.passed})
    report.series["sandwich"] = rows


def _exp_carleman_audit(cfg, rng, report):
    spec, grid, tgrid = build_problem(cfg)
    w = build_weights(cfg, spec, grid, tgrid)
    coeffs = solver_mod.LinearCoefficients.from_problem(spec, grid, tgrid)
    n_samples = cfg.get_int("run.samples", 16, positive=True)
    seed = cfg.get_int("run.seed", 0)
    rows = []
    for which in ("prop3.1", "prop3.2"):
        rep = carleman_mod.carleman_audit(coeffs, w, w.s, w.lam, n_samples,
                                          which, grid, tgrid,
                                          spec.geometry.omega, seed=seed)
        report.metrics[f"{which}_constant"] = rep.empirical_constant
        report.metrics[f"{which}_flagged"] = rep.flagged
        report.assertions[f"{which}_finite"] = math.isfinite(rep.empirical_constant)
        rows.extend({"which": which, **r} for r in rep.per_sample)
    report.series["samples"] = rows


def _exp_observability(cfg, rng, report):
    spec, grid, tgrid = build_problem(cfg)
    w = build_weights(cfg, spec, grid, tgrid)
    coeffs = solver_mod.LinearCoefficients.from_problem(spec, grid, tgrid)
    est = carleman_mod.observability_constant(
        coeffs, w, w.s, w.lam, grid, tgrid, spec.geometry.omega,
        seed=cfg.get_int("run.seed", 0))
    report.metrics["C_obs"] = est.C_obs
    report.metrics["iterations"] = est.iterations
    report.assertions["converged"] = est.converged
    report.assertions["finite"] = math.isfinite(est.C_obs)
    if grid.N <= 32:
        dense = carleman_mod.dense_observability_constant(
            coeffs, w, w.s, w.lam, grid, tgrid, spec.geometry.omega)
        rel = abs(est.C_obs - dense) / dense
        report.metrics["dense_oracle"] = dense
        report.metrics["oracle_rel_diff"] = rel
        report.assertions["oracle_agreement"] = rel < 1e-6
    report.series["history"] = [{"iter": i, "mu": float(m)}
                                for i, m in enumerate(est.history)]


def _hum_inputs(cfg):
    spec, grid, tgrid = build_problem(cfg)
    w = build_weights(cfg, spec, grid, tgrid)
    coeffs = solver_mod.LinearCoefficients.from_problem(spec, grid, tgrid)
    pen = control_mod.PenalizedConfig(
        n=cfg.get_float("weights.n", 1e4),
        cg_tol=cfg.get_float("run.cg_tol", 1e-8),
        cg_max_iter=cfg.get_int("run.cg_max_iter", 2000))
    return spec, grid, tgrid, w, coeffs, pen


def _exp_hum(cfg, rng, report):
    spec, grid, tgrid, w, coeffs, pen = _hum_inputs(cfg)
    res = control_mod.penalized_hum_solve(coeffs, None, None, spec.u0, spec.v0,
                                          pen, w, grid, tgrid,
                                          spec.geometry.omega)
    data_norm = math.sqrt(discrete_norm(spec.u0, "l2", grid) ** 2
                          + discrete_norm(spec.v0, "l2", grid) ** 2)
    report.metrics.update({
        "final_norm": res.final_norm, "J": res.J_value,
        "final_norm_rel": res.final_norm / data_norm if data_norm else 0.0,
        "optimality_residual": res.optimality_residual,
        "duality_gap": res.duality_gap, "cg_iterations": res.iterations})
    report.assertions["not_stagnated"] = not res.stagnated
    report.assertions["duality_identity"] = res.duality_gap < 1e-6
    report.series["cg"] = [
        {"cg_iter": i, "J": float(j), "grad_norm": float(g)}
        for i, (j, g) in enumerate(zip(res.j_history, res.grad_history))]


def _exp_sweep_n(cfg, rng, report):
    spec, grid, tgrid, w, coeffs, pen = _hum_inputs(cfg)
    schedule = cfg.get_list("weights.schedule", [1e2, 1e4, 1e6])
    results, summary = control_mod.penalty_continuation(
        coeffs, None, None, spec.u0, spec.v0, schedule, pen, w, grid, tgrid,
        spec.geometry.omega)
    report.metrics["final_norms"] = summary["final_norms"]
    report.metrics["monotone"] = summary["monotone_final_norm"]
    report.assertions["monotone_final_norm"] = summary["monotone_final_norm"]
    report.assertions["J_bounded"] = summary["J_bounded"]
    report.series["sweep"] = [
        {"n": n, "final_norm": fn, "J": J, "control_norm": cn}
        for n, fn, J, cn in zip(summary["schedule"], summary["final_norms"],
                                summary["J_values"],
                                summary["weighted_control_norms"])]


def _exp_nonlinear(cfg, rng, report):
    spec, grid, tgrid, w, coeffs, pen = _hum_inputs(cfg)
    nl = control_mod.NonlinearConfig(
        outer_tol=cfg.get_float("run.outer_tol", 1e-4),
        outer_max_iter=cfg.get_int("run.outer_max_iter", 20),
        damping=cfg.get_float("run.damping", 1.0),
        target_rel=cfg.get_float("run.target_rel", 1e-3),
        data_scale=cfg.get_float("run.data_scale", 1.0))
    res = control_mod.nonlinear_null_control(spec, nl, pen, w, grid, tgrid)
    report.metrics["final_norm"] = res.final_norm
    report.metrics["outer_iterations"] = res.iterations
    report.metrics["final_norm_rel"] = (res.final_norm
                                        / max(res.params["data_norm"], 1e-300))
    report.assertions["converged"] = bool(res.params["converged"])
    report.series["outer"] = res.params["outer_history"]
    if cfg.get("run.radius_probe", "no") == "yes":
        scale, outcomes = control_mod.radius_probe(
            spec, nl, pen, w, grid, tgrid,
            scale_lo=cfg.get_float("run.scale_lo", 1.0),
            scale_hi=cfg.get_float("run.scale_hi", 100.0),
            bisect_steps=cfg.get_int("run.bisect_steps", 3))
        report.metrics["breakdown_scale"] = scale
        report.series["radius"] = outcomes
        report.assertions["finite_radius"] = math.isfinite(scale)


def _exp_convergence(cfg, rng, report):
    # spatial study: manufactured steady shape u(t,x) = e^{-t} sin(pi x)
    alpha = cfg.get_float("problem.alpha", 0.5)
    T = cfg.get_float("problem.T", 1.0)
    coefficient = coeffs_mod.power_law_coefficient(alpha)
    errors = []
    sizes = [int(v) for v in cfg.get_list("run.N_list", [32, 64, 128])]
    M_ref = cfg.get_int("disc.M", 256)
    for N in sizes:
        err = _mms_error(coefficient, N, M_ref, T)
        errors.append(err)
    orders = [math.log(errors[i] / errors[i + 1]) / math.log(2.0)
              for i in range(len(errors) - 1)]
    report.metrics["spatial_errors"] = errors
    report.metrics["spatial_orders"] = orders
    report.assertions["spatial_order"] = orders[-1] >= 1.9

    m_sizes = [int(v) for v in cfg.get_list("run.M_list", [32, 64, 128])]
    terr = []
    N_ref = cfg.get_int("disc.N", 128)
    for M in m_sizes:
        terr.append(_temporal_error(coefficient, N_ref, M, T))
    torders = [math.log(terr[i] / terr[i + 1]) / math.log(2.0)
               for i in range(len(terr) - 1)]
    report.metrics["temporal_errors"] = terr
    report.metrics["temporal_orders"] = torders
    report.assertions["temporal_order"] = torders[-1] >= 0.9
    report.series["convergence"] = (
        [{"kind": "spatial", "size": n, "error": e} for n, e in zip(sizes, errors)]
        + [{"kind": "temporal", "size": m, "error": e} for m, e in zip(m_sizes, terr)])


def _mms_error(coefficient, N, M, T):
    """Max interior stencil-vs-closed-form error on x >= 0.1 for the
    manufactured residual of u = sin(pi x) under -(a u_x)_x."""
    grid = make_grid(N, coefficient)
    from .discretization import assemble_degenerate_operator
    op = assemble_degenerate_operator(coefficient, grid)
    x = grid.x
    u = np.sin(np.pi * x)
    alpha = coefficient.alpha
    exact = -(alpha * x ** (alpha - 1.0) * np.pi * np.cos(np.pi * x)
              - x ** alpha * np.pi ** 2 * np.sin(np.pi * x))
    approx = op.apply(u)
    sel = (x >= 0.1) & (x <= 1.0 - grid.h / 2) & (x > 0)
    sel[0] = sel[-1] = False
    return float(np.max(np.abs(approx[sel] - exact[sel])))


def _temporal_error(coefficient, N, M, T):
    """Error against a 4x-refined time march for the linear system."""
    grid = make_grid(N, coefficient)
    u0 = np.sin(np.pi * grid.x)
    v0 = 0.5 * np.sin(np.pi * grid.x)

    def run(M_run):
        tg = make_time_grid(T, M_run)
        coeffs = solver_mod.LinearCoefficients.constant(0.2, 0.1, 1.0, -0.1,
                                                        grid, tg)
        return solver_mod.forward_linear_solve(
            coeffs, solver_mod.SourceTerms(), u0, v0, grid, tg)

    coarse = run(M)
    fine = run(4 * M)
    du = coarse.u.values[-1] - fine.u.values[-1]
    dv = coarse.v.values[-1] - fine.v.values[-1]
    return float(np.sqrt(discrete_norm(du, "l2", grid) ** 2
                         + discrete_norm(dv, "l2", grid) ** 2))


EXPERIMENTS = {
    "wellposed": _exp_wellposed,
    "weights-audit": _exp_weights_audit,
    "carleman-audit": _exp_carleman_audit,
    "observability": _exp_observability,
    "hum": _exp_hum,
    "sweep-n": _exp_sweep_n,
    "nonlinear": _exp_nonlinear,
    "convergence": _exp_convergence,
}


def run_experiment(name: str, cfg: ExperimentConfig, *, seed=None) -> RunReport:
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from "
                          f"{sorted(EXPERIMENTS)}")
    if seed is not None:
        cfg.entries["run.seed"] = str(seed)
    rng = np.random.default_rng(cfg.get_int("run.seed", 0))
    report = RunReport(experiment=name, config_echo=cfg.text)
    t0 = time.perf_counter()
    EXPERIMENTS[name](cfg, rng, report)
    report.wall_time = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def _atomic_write(path, data: bytes):
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_quote(value):
    s = repr(value) if isinstance(value, float) else str(value)
    if any(c in s for c in ",\"\n\r"):
        s = '"' + s.replace('"', '""') + '"'
    return s


def _write_csv(path, rows):
    if not rows:
        header = []
    else:
        header = list(rows[0].keys())
    buf = io.StringIO()
    buf.write(",".join(_csv_quote(h) for h in header) + "\r\n")
    for row in rows:
        buf.write(",".join(_csv_quote(row.get(h, "")) for h in header) + "\r\n")
    _atomic_write(path, buf.getvalue().encode())


def _svg_plot(path, name, rows, x_key, y_key):
    W, H, pad = 640, 400, 50
    pts = [(float(r[x_key]), float(r[y_key])) for r in rows
           if _plottable(r.get(x_key)) and _plottable(r.get(y_key))]
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">' ,
             f'<rect width="{W}" height="{H}" fill="white"/>',
             f'<text x="{W // 2}" y="20" text-anchor="middle">{name}</text>']
    if pts:
        xs, ys = zip(*pts)
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        sx = (W - 2 * pad) / (x1 - x0 if x1 > x0 else 1.0)
        sy = (H - 2 * pad) / (y1 - y0 if y1 > y0 else 1.0)
        coords = " ".join(
            f"{pad + (x - x0) * sx:.2f},{H - pad - (y - y0) * sy:.2f}"
            for x, y in pts)
        lines.append(f'<polyline points="{coords}" fill="none" stroke="black"/>')
        lines.append(f'<text x="{pad}" y="{H - 10}">{x_key}: [{x0:g}, {x1:g}]</text>')
        lines.append(f'<text x="{pad}" y="{H - 25}">{y_key}: [{y0:g}, {y1:g}]</text>')
    lines.append("</svg>")
    _atomic_write(path, "\n".join(lines).encode())


def _plottable(v):
    try:
        return math.isfinite(float(v))
    except (TypeError, ValueError):
        return False


def emit_report(report: RunReport, out_dir, formats=("csv", "json", "svg")):
    """Write summary.json, series_*.csv and plot_*.svg atomically.  The
    JSON summary is deterministic (wall time deliberately excluded)."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    if "csv" in formats:
        for name, rows in sorted(report.series.items()):
            path = os.path.join(out_dir, f"series_{name}.csv")
            _write_csv(path, rows)
            files.append(path)
    if "svg" in formats:
        for name, rows in sorted(report.series.items()):
            if not rows:
                continue
            keys = [k for k in rows[0] if _plottable(rows[0][k])]
            if len(keys) >= 2:
                path = os.path.join(out_dir, f"plot_{name}.svg")
                _svg_plot(path, name, rows, keys[0], keys[1])
                files.append(path)
    report.artifacts = [os.path.basename(f) for f in files]
    if "json" in formats:
        payload = {
            "schema_version": 1,
            "experiment": report.experiment,
            "config": report.config_echo,
            "metrics": report.metrics,
            "assertions": report.assertions,
            "artifacts": report.artifacts,
            "passed": report.passed,
        }
        path = os.path.join(out_dir, "summary.json")
        _atomic_write(path, json.dumps(payload, sort_keys=True,
                                       indent=1).encode() + b"\n")
        files.append(path)
    return files


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="degenctrl",
        description="Null-control experiments for degenerate coupled systems")
    parser.add_argument("experiment", help=f"one of {sorted(EXPERIMENTS)}")
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default="out")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--strict", action="store_true")
    args = parser.parse_args(argv)

    try:
        with open(args.config, "r", encoding="utf-8") as f:
            cfg = parse_config(f.read())
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    # preflight the output directory before any computation starts
    try:
        os.makedirs(args.out, exist_ok=True)
        probe = os.path.join(args.out, ".write-probe")
        with open(probe, "w") as f:
            f.write("")
        os.unlink(probe)
    except OSError as exc:
        print(f"output directory not writable: {exc}", file=sys.stderr)
        return 2

    try:
        report = run_experiment(args.experiment, cfg, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DegenctrlError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3

    emit_report(report, args.out)
    for name, ok in report.assertions.items():
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
    print(f"wall time: {report.wall_time:.2f} s", file=sys.stderr)
    if not report.passed:
        failing = [k for k, v in report.assertions.items() if not v]
        print(f"failed assertions: {', '.join(failing)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
