"""Named experiment studies: each turns a run configuration into CSV tables,
pass/fail checks, and extra artifacts, with full determinism (exact-mode
numbers are bit-identical across reruns and worker counts).

CSV cells render floats with 17 significant digits, so files are diffable and
hash-stable; manifests are JSON with sorted keys and carry the configuration
echo, the check outcomes, and a content hash per emitted file.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .approx import (ApproxConfig, SandwichParams, build_frozen,
                     measure_errors, measure_gradient_bound,
                     projection_error_sup, sandwich_check)
from .calculus import (CATALOG, decomposition_residual, gateaux_quotient,
                       generator_hamiltonian_gap, ito_kunita_residual,
                       make_functional)
from .config import RunConfig, config_echo, validate_config
from .dynamics import (SEMI_IMPLICIT, SolverConfig, flow_check, full_grid,
                       picard_solve, solve_state)
from .estimates import control_independence, run_estimate_suite
from .paths import (Path, PathClassSpec, TimeGrid, path_to_text,
                    sample_path_class)
from .problem import (ControlSet, ZeroNoise, build_noise_tree, lipschitz_probe,
                      make_instance, sample_wiener)
from .seeding import ordered_map, rng_for
from .spectral import H, SpectralBasis, verify_gelfand
from .value import (OpenLoopControl, check_dpp, check_supermartingale,
                    check_value_regularity, constant_control, cost_J,
                    value_adapted_tree, value_brute_force, value_open_loop)

COMMANDS = ("verify-gelfand", "solve", "value", "dpp", "estimates",
            "calculus", "approx-study", "sandwich", "all")


class StudyError(RuntimeError):
    pass


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    bound: float

    def line(self) -> str:
        word = "PASS" if self.passed else "FAIL"
        return f"{word} {self.name}: measured={self.measured:.6g} bound={self.bound:.6g}"


@dataclass
class StudyResult:
    command: str
    tables: dict[str, list[dict]] = field(default_factory=dict)
    checks: list[CheckResult] = field(default_factory=list)
    artifacts: dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, (np.floating,)):
        return format(float(value), ".17g")
    return str(value)


def render_csv(rows: list[dict]) -> str:
    if not rows:
        return "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(rows[0].keys())
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row[h]) for h in header])
    return buf.getvalue()


def emit_plotdata(csv_text: str) -> str:
    """Tidy long-format view of a study CSV: one (x, y, series) row per
    measurement.  The first column is the x axis; original cell strings are
    copied verbatim so a round trip recovers the source values exactly."""
    reader = csv.reader(io.StringIO(csv_text))
    rows = [row for row in reader if row]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x", "y", "series"])
    if len(rows) <= 1:
        return buf.getvalue()
    header = rows[0]
    for row in rows[1:]:
        for col, cell in zip(header[1:], row[1:]):
            writer.writerow([row[0], cell, col])
    return buf.getvalue()


def plotdata_to_table(plot_csv: str) -> dict[tuple[str, str], str]:
    """Inverse view of emit_plotdata for round-trip checks: (x, series) -> y."""
    reader = csv.reader(io.StringIO(plot_csv))
    rows = [row for row in reader if row]
    return {(x, series): y for x, y, series in rows[1:]}


def _instance_from_config(cfg: RunConfig, basis: SpectralBasis):
    kwargs = {}
    if cfg.instance_f:
        kwargs["f"] = cfg.instance_f
    if cfg.instance_G:
        kwargs["G"] = cfg.instance_G
    if cfg.instance_name == "example21":
        kwargs = {"eta_modes": cfg.eta_modes, "eta_rate": cfg.eta_rate,
                  "eta_vol": cfg.eta_vol}
    return make_instance(cfg.instance_name, basis, horizon=cfg.horizon,
                         control_set=ControlSet(cfg.control_set), m=cfg.tree_m,
                         **kwargs)


# ---------------------------------------------------------------------------
# Individual studies
# ---------------------------------------------------------------------------

def study_verify_gelfand(cfg: RunConfig) -> StudyResult:
    report = verify_gelfand(SpectralBasis(cfg.basis_dim), 1000, cfg.seed)
    tol = 1e-12
    rows, checks = [], []
    for name in ("coercivity_identity", "coercivity", "boundedness",
                 "embedding_vstar_h", "embedding_h_v"):
        rows.append({"check": name, "n_samples": report["n_samples"],
                     "max_violation": report[name], "bound": tol,
                     "seed": report["seed"]})
        checks.append(CheckResult(f"gelfand.{name}", report[name] <= tol,
                                  report[name], tol))
    return StudyResult("verify-gelfand", {"gelfand": rows}, checks)


def study_solve(cfg: RunConfig) -> StudyResult:
    basis = SpectralBasis(cfg.basis_dim)
    inst = _instance_from_config(cfg, basis)
    solver = SolverConfig(dt=cfg.horizon / cfg.grid_steps)
    x0 = cfg.x0_vector(basis.dim)
    control = constant_control(inst, 0)
    noise = sample_wiener(full_grid(inst, solver.dt), inst.m,
                          rng_for(cfg.seed, "solve-noise")) if inst.is_random \
        else ZeroNoise(inst.m)
    direct = solve_state(inst, x0, control, noise, solver)
    fixed = picard_solve(inst, x0, control, noise, solver)
    gap = max(basis.norm(a - b, H)
              for a, b in zip(direct.path.values, fixed.path.values))
    semi = solve_state(inst, x0, control, noise,
                       SolverConfig(dt=solver.dt, method=SEMI_IMPLICIT))
    semi_gap = max(basis.norm(a - b, H)
                   for a, b in zip(direct.path.values, semi.path.values))
    fgap = flow_check(inst, x0, cfg.horizon / 2, control, noise, solver)
    probe = lipschitz_probe(inst, 20, H, rng_for(cfg.seed, "solve-lip"))
    L = inst.coeffs.L
    rows = [{"instance": inst.name, "dt": solver.dt, "h_max": direct.h_max,
             "v_energy": direct.v_energy, "picard_windows": len(fixed.picard_trace),
             "picard_iters": sum(len(w) for w in fixed.picard_trace),
             "picard_direct_gap": gap, "semi_implicit_gap": semi_gap,
             "flow_gap": fgap, "tail_mass": basis.tail_mass(x0),
             "lip_f": probe["f"], "lip_beta": probe["beta"], "lip_G": probe["G"],
             "seed": cfg.seed}]
    checks = [
        CheckResult("solve.picard_direct_gap", gap <= 10 * solver.picard_tol,
                    gap, 10 * solver.picard_tol),
        CheckResult("solve.flow_gap", fgap <= 1e-12, fgap, 1e-12),
        CheckResult("solve.lipschitz_within_L",
                    max(probe["f"], probe["beta"], probe["G"]) <= L + 1e-9,
                    max(probe["f"], probe["beta"], probe["G"]), L),
        CheckResult("solve.bounds_within_L",
                    max(probe["max_f"], probe["max_beta"], probe["max_G"]) <= L + 1e-9,
                    max(probe["max_f"], probe["max_beta"], probe["max_G"]), L),
    ]
    artifacts = {"solution_path.txt": path_to_text(direct.path),
                 "solution_diagnostics.json": fixed.diagnostics_json()}
    return StudyResult("solve", {"solve": rows}, checks, artifacts)


def study_value(cfg: RunConfig) -> StudyResult:
    basis = SpectralBasis(cfg.basis_dim)
    inst = _instance_from_config(cfg, basis)
    solver = SolverConfig(dt=cfg.horizon / cfg.grid_steps)
    x0 = cfg.x0_vector(basis.dim)
    rows, checks = [], []
    if inst.is_random:
        tree = build_noise_tree(TimeGrid(0.0, cfg.horizon, cfg.tree_depth),
                                cfg.tree_m, cfg.tree_budget)
        est, _ = value_adapted_tree(inst, x0, tree)
        rows.append({"instance": inst.name, "mode": est.mode, "mesh": cfg.tree_depth,
                     "value": est.value, "stderr": est.stderr, "argmin": "",
                     "n_samples": est.n_samples, "seed": cfg.seed})
        mc = cost_J(inst, x0, constant_control(inst, 0), config=solver,
                    n_mc=cfg.mc_samples, seed=cfg.seed)
        rows.append({"instance": inst.name, "mode": mc.mode, "mesh": 0,
                     "value": mc.value, "stderr": mc.stderr, "argmin": "0",
                     "n_samples": mc.n_samples, "seed": cfg.seed})
        checks.append(CheckResult("value.tree_exact_stderr", est.stderr == 0.0,
                                  est.stderr, 0.0))
        return StudyResult("value", {"value": rows}, checks)
    vals = {}
    for mesh in (1, 2, 4):
        est = value_open_loop(inst, x0, mesh, solver)
        vals[mesh] = est.value
        rows.append({"instance": inst.name, "mode": est.mode, "mesh": mesh,
                     "value": est.value, "stderr": est.stderr,
                     "argmin": "|".join(str(l) for l in est.argmin),
                     "n_samples": est.n_samples, "seed": cfg.seed})
    checks.append(CheckResult("value.mesh_nesting",
                              vals[4] <= vals[2] + 1e-12 and vals[2] <= vals[1] + 1e-12,
                              vals[4] - vals[1], 0.0))
    depth = min(cfg.tree_depth, 3)
    tree = build_noise_tree(TimeGrid(0.0, cfg.horizon, depth), cfg.tree_m,
                            cfg.tree_budget)
    vt, policy = value_adapted_tree(inst, x0, tree)
    vo = value_open_loop(inst, x0, depth, SolverConfig(dt=cfg.horizon / depth))
    agree = abs(vt.value - vo.value)
    rows.append({"instance": inst.name, "mode": vt.mode, "mesh": depth,
                 "value": vt.value, "stderr": 0.0, "argmin": "",
                 "n_samples": vt.n_samples, "seed": cfg.seed})
    checks.append(CheckResult("value.tree_matches_open_loop", agree <= 1e-12,
                              agree, 1e-12))
    reg = check_value_regularity(inst, cfg.regularity_probes, cfg.seed,
                                 n_intervals=cfg.control_mesh,
                                 config=SolverConfig(dt=cfg.horizon / 16))
    rows.append({"instance": inst.name, "mode": "regularity",
                 "mesh": cfg.control_mesh, "value": reg["max_abs_value"],
                 "stderr": 0.0, "argmin": "", "n_samples": reg["n_probes"],
                 "seed": cfg.seed})
    checks.append(CheckResult("value.uniform_bound",
                              reg["max_abs_value"] <= reg["value_bound"] + 1e-12,
                              reg["max_abs_value"], reg["value_bound"]))
    checks.append(CheckResult("value.path_lipschitz",
                              reg["max_lipschitz_ratio"] <= reg["lipschitz_bound"],
                              reg["max_lipschitz_ratio"], reg["lipschitz_bound"]))
    sm = check_supermartingale(inst, x0, tree, policy)
    checks.append(CheckResult("value.supermartingale_violation",
                              sm["max_violation"] <= 1e-12,
                              sm["max_violation"], 1e-12))
    checks.append(CheckResult("value.optimal_policy_martingale",
                              abs(sm["max_drift"]) <= 1e-12,
                              abs(sm["max_drift"]), 1e-12))
    return StudyResult("value", {"value": rows}, checks)


def study_dpp(cfg: RunConfig) -> StudyResult:
    basis = SpectralBasis(cfg.basis_dim)
    inst = _instance_from_config(cfg, basis)
    x0 = cfg.x0_vector(basis.dim)
    rows, checks = [], []
    worst = 0.0
    for depth in range(1, cfg.tree_depth + 1):
        tree = build_noise_tree(TimeGrid(0.0, cfg.horizon, depth), cfg.tree_m,
                                cfg.tree_budget)
        grid = tree.grid
        for i in range(depth + 1):
            for j in range(i, depth + 1):
                t, t_hat = float(grid.nodes[i]), float(grid.nodes[j])
                if i == 0:
                    init = x0
                else:
                    sol = solve_state(inst, x0, constant_control(inst, 0),
                                      ZeroNoise(inst.m) if not inst.is_random
                                      else sample_wiener(grid, inst.m,
                                                         rng_for(cfg.seed, "dpp", i)),
                                      SolverConfig(dt=grid.dt))
                    init = sol.path.restrict(t)
                gap = check_dpp(inst, init, tree, t, t_hat)
                worst = max(worst, gap)
                rows.append({"instance": inst.name, "depth": depth,
                             "n_controls": len(inst.control_set), "t": t,
                             "t_hat": t_hat, "gap": gap, "seed": cfg.seed})
    checks.append(CheckResult("dpp.max_gap", worst <= 1e-12, worst, 1e-12))
    bf_depth = 2 if cfg.tree_m == 1 else 1
    tree = build_noise_tree(TimeGrid(0.0, cfg.horizon, bf_depth), cfg.tree_m,
                            cfg.tree_budget)
    vt, _ = value_adapted_tree(inst, x0, tree)
    vb, _ = value_brute_force(inst, x0, tree)
    diff = abs(vt.value - vb)
    rows.append({"instance": inst.name, "depth": bf_depth,
                 "n_controls": len(inst.control_set), "t": 0.0, "t_hat": -1.0,
                 "gap": diff, "seed": cfg.seed})
    checks.append(CheckResult("dpp.brute_force_agreement", diff <= 1e-12,
                              diff, 1e-12))
    return StudyResult("dpp", {"dpp": rows}, checks)


def study_estimates(cfg: RunConfig) -> StudyResult:
    solver = SolverConfig(dt=cfg.horizon / cfg.grid_steps)
    suite = run_estimate_suite(cfg.basis_dim, cfg.estimates_draws, cfg.seed,
                               config=solver, horizon=cfg.horizon,
                               workers=cfg.workers)
    indep = control_independence(cfg.basis_dim, max(cfg.estimates_draws // 5, 5),
                                 cfg.estimates_controls, cfg.seed, config=solver,
                                 horizon=cfg.horizon)
    checks = [
        CheckResult("estimates.violations", suite["violations"] == 0,
                    suite["violations"], 0.0),
        CheckResult("estimates.worst_ratio", suite["worst"].worst() <= 1.0,
                    suite["worst"].worst(), 1.0),
        CheckResult("estimates.control_independence",
                    indep["max_spread"] < 0.01, indep["max_spread"], 0.01),
    ]
    indep_rows = [{"control": i, "growth": w.growth, "holder": w.holder,
                   "stability": w.stability, "short_time": w.short_time}
                  for i, w in enumerate(indep["per_control"])]
    return StudyResult("estimates",
                       {"estimates": suite["rows"], "control_independence": indep_rows},
                       checks)


def study_calculus(cfg: RunConfig) -> StudyResult:
    basis = SpectralBasis(min(cfg.basis_dim, 16))
    inst = make_instance("steer-1-terminal", basis, horizon=cfg.horizon,
                         control_set=ControlSet(cfg.control_set))
    x_rho = 0.4 * basis.unit(1)
    control = constant_control(inst, 0)
    rows, checks = [], []
    dts = [2.0 ** -e for e in cfg.calculus_dt_exps]

    def slope_for(name: str):
        u = make_functional(name, basis, cfg.horizon)
        stats = [ito_kunita_residual(u, inst, control, 0.0, cfg.horizon, x_rho,
                                     cfg.calculus_slope_mc, cfg.seed, dt)
                 for dt in dts]
        xs = np.log([s.dt for s in stats])
        ys = np.log([max(s.mean_abs, 1e-300) for s in stats])
        slope = float(np.polyfit(xs, ys, 1)[0])
        return name, stats, slope

    for name, stats, slope in ordered_map(slope_for, cfg.calculus_functionals,
                                          cfg.workers):
        for s in stats:
            rows.append({"functional": name, "dt": s.dt, "n_mc": s.n_mc,
                         "mean_abs": s.mean_abs, "mean": s.mean,
                         "stderr": s.stderr, "mart_mean": s.mart_mean,
                         "mart_stderr": s.mart_stderr, "slope": slope,
                         "seed": cfg.seed})
        checks.append(CheckResult(f"calculus.slope.{name}",
                                  0.8 <= slope <= 1.2, slope, 1.2))
    um = make_functional(cfg.calculus_mart_functional, basis, cfg.horizon)
    st = ito_kunita_residual(um, inst, control, 0.0, cfg.horizon, x_rho,
                             cfg.calculus_n_mc, cfg.seed, 2.0 ** -7)
    rows.append({"functional": um.name, "dt": st.dt, "n_mc": st.n_mc,
                 "mean_abs": st.mean_abs, "mean": st.mean, "stderr": st.stderr,
                 "mart_mean": st.mart_mean, "mart_stderr": st.mart_stderr,
                 "slope": 0.0, "seed": cfg.seed})
    checks.append(CheckResult("calculus.martingale_unbiased",
                              abs(st.mart_mean) <= 3 * st.mart_stderr,
                              abs(st.mart_mean), 3 * st.mart_stderr))
    grad_worst = 0.0
    rng = rng_for(cfg.seed, "calculus-gateaux")
    grid = TimeGrid(0.0, cfg.horizon / 2, 8)
    for i in range(25):
        name = CATALOG[i % len(CATALOG)]
        u = make_functional(name, basis, cfg.horizon)
        spec = PathClassSpec(basis, 1.0, np.zeros(basis.dim), cfg.horizon / 2,
                             n_steps=8)
        x = sample_path_class(spec, rng)
        h = rng.standard_normal(basis.dim)
        grad = u.vertical_gradient(basis, cfg.horizon / 2, x)
        fd = gateaux_quotient(u, basis, cfg.horizon / 2, x, h)
        scale = max(1.0, abs(fd))
        grad_worst = max(grad_worst, abs(fd - float(np.dot(grad, h))) / scale)
    checks.append(CheckResult("calculus.gateaux_match", grad_worst <= 1e-5,
                              grad_worst, 1e-5))
    gh_worst = 0.0
    for name in ("linear-z1", "w1-z1", "sin-z1"):
        u = make_functional(name, basis, cfg.horizon)
        spec = PathClassSpec(basis, 1.0, np.zeros(basis.dim), cfg.horizon / 2,
                             n_steps=8)
        x = sample_path_class(spec, rng)
        gh_worst = max(gh_worst, generator_hamiltonian_gap(
            u, inst, cfg.horizon / 2, x))
    checks.append(CheckResult("calculus.generator_hamiltonian", gh_worst <= 1e-12,
                              gh_worst, 1e-12))
    dec_rows = []
    udec = make_functional("quad-w1", basis, cfg.horizon)
    xr = sample_path_class(PathClassSpec(basis, 1.0, np.zeros(basis.dim),
                                         cfg.horizon / 4, n_steps=4),
                           rng_for(cfg.seed, "calculus-dec"))
    for dt in (1 / 16, 1 / 32, 1 / 64):
        r = decomposition_residual(udec, basis, xr, cfg.horizon, 2000,
                                   cfg.seed, dt)
        dec_rows.append({"functional": udec.name, "dt": dt,
                         "mean_sq": r["mean_sq"], "n_mc": r["n_mc"],
                         "seed": cfg.seed})
    dslope = float(np.polyfit(np.log([r["dt"] for r in dec_rows]),
                              np.log([max(r["mean_sq"], 1e-300) for r in dec_rows]),
                              1)[0])
    checks.append(CheckResult("calculus.decomposition_linear_in_dt",
                              0.8 <= dslope <= 1.2, dslope, 1.2))
    return StudyResult("calculus", {"calculus": rows, "decomposition": dec_rows},
                       checks)


def study_approx(cfg: RunConfig) -> StudyResult:
    basis = SpectralBasis(cfg.basis_dim)
    inst = make_instance(cfg.approx_instance, basis, horizon=cfg.horizon,
                         control_set=ControlSet(cfg.control_set),
                         f=cfg.approx_f or None, G=cfg.approx_G or None)
    grid = TimeGrid(0.0, cfg.horizon, cfg.grid_steps)
    x0 = cfg.x0_vector(basis.dim)
    rows, checks = [], []
    base_d = cfg.approx_proj_dims[len(cfg.approx_proj_dims) // 2]

    def errors_at(n_partition, level, d, k, ensemble):
        acfg = ApproxConfig(n_partition, level, d, k, x0, ensemble=ensemble,
                            active_modes=min(8, basis.dim))
        rep = measure_errors(inst, build_frozen(inst, acfg), acfg, grid, cfg.seed)
        rows.append({"N": n_partition, "M": level, "d": d, "k": k,
                     "f_err": rep.l2_f, "beta_err": rep.l2_beta,
                     "G_err": rep.g_err, "freeze_sup": rep.freeze_sup,
                     "freeze_bound": rep.freeze_bound,
                     "tail_mass": basis.tail_mass(x0), "seed": cfg.seed})
        return rep

    ens = cfg.approx_ensemble
    m_reports = [errors_at(cfg.approx_partition, level, base_d, 1.0, ens)
                 for level in cfg.approx_dyadic_levels]
    freeze_ok = all(r.freeze_sup <= r.freeze_bound for r in m_reports)
    checks.append(CheckResult("approx.freezing_bound", freeze_ok,
                              max(r.freeze_sup / max(r.freeze_bound, 1e-30)
                                  for r in m_reports), 1.0))
    mono_m = all(a.l2_f >= b.l2_f - 1e-12 and a.l2_beta >= b.l2_beta - 1e-12
                 and a.g_err >= b.g_err - 1e-12
                 for a, b in zip(m_reports, m_reports[1:]))
    checks.append(CheckResult("approx.monotone_in_M", mono_m,
                              0.0 if mono_m else 1.0, 0.0))
    level_mid = cfg.approx_dyadic_levels[len(cfg.approx_dyadic_levels) // 2]
    d_reports = [errors_at(cfg.approx_partition, level_mid, d, 1.0, ens)
                 for d in cfg.approx_proj_dims]
    mono_d = all(a.l2_beta >= b.l2_beta - 1e-12
                 for a, b in zip(d_reports, d_reports[1:]))
    checks.append(CheckResult("approx.monotone_in_d", mono_d,
                              0.0 if mono_d else 1.0, 0.0))
    n_reports = [errors_at(n, level_mid, base_d, 1.0, max(ens // 4, 8))
                 for n in (cfg.approx_partition, 2 * cfg.approx_partition)]
    mono_n = all(a.l2_f >= b.l2_f - 1e-12 and a.g_err >= b.g_err - 1e-12
                 for a, b in zip(n_reports, n_reports[1:]))
    checks.append(CheckResult("approx.monotone_in_N", mono_n,
                              0.0 if mono_n else 1.0, 0.0))
    k_totals = []
    for k in cfg.approx_class_bounds:
        rep = errors_at(cfg.approx_partition, level_mid, base_d, k,
                        max(ens // 4, 8))
        k_totals.append((k, rep.l2_f + rep.l2_beta + rep.g_err))
    kslope = float(np.polyfit(np.log([1.0 + k for k, _ in k_totals]),
                              np.log([max(t, 1e-300) for _, t in k_totals]),
                              1)[0])
    checks.append(CheckResult("approx.budget_k_slope", kslope <= 1.1, kslope, 1.1))
    acfg = ApproxConfig(cfg.approx_partition, level_mid, base_d, 1.0, x0,
                        ensemble=min(ens, 32), active_modes=min(8, basis.dim))
    proj = projection_error_sup(inst, list(cfg.approx_proj_dims), acfg, grid,
                                cfg.seed)
    proj_rows = proj["rows"]
    strictly = all(a["sup_err"] > b["sup_err"] + 1e-15
                   for a, b in zip(proj_rows, proj_rows[1:]))
    checks.append(CheckResult("approx.projection_strictly_decreasing", strictly,
                              0.0 if strictly else 1.0, 0.0))
    coord_ok = all(r["sup_err"] <= r["coord_bound"] + 1e-12 for r in proj_rows)
    checks.append(CheckResult("approx.projection_coord_bound", coord_ok,
                              0.0 if coord_ok else 1.0, 0.0))
    wit_gap = max(abs(r["witness_err"] - r["witness_oracle"]) for r in proj_rows)
    checks.append(CheckResult("approx.witness_tail_sum", wit_gap <= 1e-6,
                              wit_gap, 1e-6))
    return StudyResult("approx-study",
                       {"approx": rows, "projection": proj_rows}, checks)


def study_sandwich(cfg: RunConfig) -> StudyResult:
    basis = SpectralBasis(cfg.basis_dim)
    inst = _instance_from_config(cfg, basis)
    if inst.is_random:
        raise StudyError("sandwich study drives deterministic instances")
    x0 = cfg.x0_vector(basis.dim)
    d = cfg.sandwich_proj_dim
    depth = cfg.sandwich_depth
    rows, checks = [], []
    # degenerate configuration: freezing at every node, full band, no noise
    deg_depth = 4
    deg_cfg = ApproxConfig(cfg.approx_partition, 2, basis.dim, 1.0, x0,
                           ensemble=min(cfg.approx_ensemble, 16))
    deg = sandwich_check(inst, deg_cfg, SandwichParams(0.0, 1.0, inst.coeffs.L),
                         depth=deg_depth, n_probes=5, seed=cfg.seed)
    checks.append(CheckResult("sandwich.degenerate_gap",
                              deg["max_gap"] <= 1e-12 and deg["violations"] == 0,
                              deg["max_gap"], 1e-12))
    grid = TimeGrid(0.0, cfg.horizon, depth)
    acfg = ApproxConfig(cfg.approx_partition, 2, d, 1.0, x0,
                        ensemble=min(cfg.approx_ensemble, 64))
    frozen = build_frozen(inst, acfg)
    l_tilde = measure_gradient_bound(frozen, grid, cfg.sandwich_deltas[0], d,
                                     [x0, np.zeros(basis.dim)])
    l_tilde = max(1.05 * l_tilde, 0.1)
    gaps = []

    def run_delta(delta: float):
        params = SandwichParams(delta=delta, l_tilde=l_tilde, l_c=inst.coeffs.L)
        return delta, sandwich_check(inst, acfg, params, depth=depth,
                                     n_probes=cfg.sandwich_probes, seed=cfg.seed)

    for delta, res in ordered_map(run_delta, cfg.sandwich_deltas, cfg.workers):
        gaps.append(res["max_gap"])
        for p in res["probes"]:
            rows.append({"delta": delta, "level": p.level, "b_node": p.b_node,
                         "lower": p.lower, "value": p.value, "upper": p.upper,
                         "gap": p.gap, "ordered": p.ordered, "seed": cfg.seed})
        checks.append(CheckResult(f"sandwich.ordering.delta={delta}",
                                  res["violations"] == 0,
                                  res["violations"], 0.0))
    mono = all(a >= b - 1e-12 for a, b in zip(gaps, gaps[1:]))
    checks.append(CheckResult("sandwich.gap_nonincreasing_in_delta", mono,
                              0.0 if mono else 1.0, 0.0))
    summary = [{"delta": dlt, "max_gap": g, "l_tilde": l_tilde,
                "C2": 4 * inst.coeffs.L * (l_tilde + 1), "depth": depth,
                "d": d, "seed": cfg.seed}
               for dlt, g in zip(cfg.sandwich_deltas, gaps)]
    return StudyResult("sandwich", {"sandwich": rows, "sandwich_summary": summary},
                       checks)


_STUDIES = {
    "verify-gelfand": study_verify_gelfand,
    "solve": study_solve,
    "value": study_value,
    "dpp": study_dpp,
    "estimates": study_estimates,
    "calculus": study_calculus,
    "approx-study": study_approx,
    "sandwich": study_sandwich,
}


def run_study(command: str, cfg: RunConfig) -> StudyResult:
    errors = validate_config(cfg)
    if errors:
        raise StudyError("config validation failed: " + "; ".join(errors))
    if command == "all":
        merged = StudyResult("all")
        for name in _STUDIES:
            part = _STUDIES[name](cfg)
            merged.tables.update({f"{name}.{t}" if t != name else t: rws
                                  for t, rws in part.tables.items()})
            merged.checks.extend(part.checks)
            merged.artifacts.update(part.artifacts)
        return merged
    if command not in _STUDIES:
        raise StudyError(f"unknown command {command!r}; expected one of {COMMANDS}")
    return _STUDIES[command](cfg)


def result_files(result: StudyResult) -> dict[str, str]:
    """All artifact files of a study: one CSV per table plus extras."""
    files = {f"{name}.csv": render_csv(rows) for name, rows in result.tables.items()}
    files.update(result.artifacts)
    return files


def build_manifest(result: StudyResult, cfg: RunConfig, wall_clock: float,
                   files: dict[str, str]) -> dict:
    return {
        "command": result.command,
        "config": config_echo(cfg),
        "version": __version__,
        "wall_clock_s": wall_clock,
        "passed": result.passed,
        "checks": [{"name": c.name, "passed": c.passed, "measured": c.measured,
                    "bound": c.bound} for c in result.checks],
        "files": {name: hashlib.sha256(content.encode()).hexdigest()
                  for name, content in sorted(files.items())},
    }


def execute(command: str, cfg: RunConfig) -> tuple[StudyResult, dict, dict]:
    """Run a study and return (result, files, manifest)."""
    start = time.monotonic()
    result = run_study(command, cfg)
    files = result_files(result)
    manifest = build_manifest(result, cfg, time.monotonic() - start, files)
    return result, files, manifest
