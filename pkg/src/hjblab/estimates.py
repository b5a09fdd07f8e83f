"""A-priori estimates for the controlled state: growth of the energy norm,
square-root Hölder modulus of the path distance, stability in the initial
path, the short-time bound for smooth initial data, and the independence of
every constant from the control process.

All constants are assembled from the structure constants (c, c1+, c2, c3),
the coefficient bound L, and the horizon T exactly as the energy-inequality
chain produces them; the suite asserts the resulting bounds pathwise over
randomized draws with zero tolerance for violations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import SolverConfig, full_grid, solve_state
from .paths import Path, TimeGrid, constant_path, path_dist
from .problem import ProblemInstance, ZeroNoise, make_instance, sample_wiener
from .seeding import ordered_map, rng_for
from .spectral import H, V, VSTAR, SpectralBasis
from .value import OpenLoopControl


def growth_constant_sq(L: float, T: float, c1_plus: float) -> float:
    """K^2 with K_1 = max{2, 2LT} and K^2 = K_1 e^{2(L+c1+)T}."""
    return max(2.0, 2.0 * L * T) * math.exp(2.0 * (L + c1_plus) * T)


def holder_constant(L: float, T: float, c: float, c1_plus: float,
                    c2: float, c3: float) -> float:
    """Kbar = 1 + (2 T c^2 L^2 + 2 c3^2 K^2 / c2)^(1/2)."""
    K2 = growth_constant_sq(L, T, c1_plus)
    return 1.0 + math.sqrt(2.0 * T * c * c * L * L + 2.0 * c3 * c3 * K2 / c2)


def stability_constant_from(L: float, T: float, c1_plus: float, c2: float) -> float:
    """K = sqrt(3) e^{(3/2) T (2 L^2 / c2 + c1+)}."""
    return math.sqrt(3.0) * math.exp(1.5 * T * (2.0 * L * L / c2 + c1_plus))


def short_time_constant(L: float) -> float:
    """Ktilde = max{8 L^2, 8}."""
    return max(8.0 * L * L, 8.0)


def growth_constant_sq_for(inst: ProblemInstance) -> float:
    return growth_constant_sq(inst.coeffs.L, inst.horizon, inst.constants.c1_plus)


def holder_constant_for(inst: ProblemInstance, drift_bound: float | None = None) -> float:
    cst = inst.constants
    k = inst.coeffs.L if drift_bound is None else drift_bound
    return holder_constant(k, inst.horizon, cst.c, cst.c1_plus, cst.c2, cst.c3)


def stability_constant(inst: ProblemInstance) -> float:
    cst = inst.constants
    return stability_constant_from(inst.coeffs.L, inst.horizon, cst.c1_plus, cst.c2)


@dataclass(frozen=True)
class EstimateRatios:
    growth: float
    holder: float
    stability: float
    short_time: float

    def worst(self) -> float:
        return max(self.growth, self.holder, self.stability, self.short_time)


def _sup_h(basis: SpectralBasis, x: Path) -> float:
    return max(basis.norm(v, H) for v in x.node_values())


def _random_initial(basis: SpectralBasis, grid_r: TimeGrid, rng,
                    scale_range=(0.05, 30.0)) -> Path:
    scale = math.exp(rng.uniform(math.log(scale_range[0]), math.log(scale_range[1])))
    vals = rng.standard_normal((grid_r.n_steps + 1, basis.dim))
    vals *= scale / max(np.sqrt((vals ** 2).sum(axis=1)).max(), 1e-12)
    return Path(grid_r, vals)


def _random_control(inst: ProblemInstance, r: float, rng, n_intervals: int = 4) -> OpenLoopControl:
    labels = tuple(int(rng.integers(0, len(inst.control_set))) for _ in range(n_intervals))
    return OpenLoopControl(r, inst.horizon, labels, inst)


DRAW_ROSTER = ("null", "steer-1", "delay", "feedback", "random-track")


def measure_ratios(inst: ProblemInstance, xi: Path, xi_hat: Path, control,
                   noise, config: SolverConfig, rng) -> EstimateRatios:
    """All four estimate ratios (measured / bound) for one draw; every ratio
    must stay at or below 1."""
    basis, cst, L, T = inst.basis, inst.constants, inst.coeffs.L, inst.horizon
    sol = solve_state(inst, xi, control, noise, config)
    sup_xi = _sup_h(basis, xi)

    # growth: max ||X||_H^2 + int c2 ||X||_V^2 <= K^2 (1 + ||xi||^2)
    lhs = sol.h_max ** 2 + cst.c2 * sol.v_energy
    growth = lhs / (growth_constant_sq_for(inst) * (1.0 + sup_xi ** 2))

    # holder: d_{0,V*}(X_s, X_t) <= Kbar (1 + ||xi||) sqrt(s - t)
    grid = sol.path.grid
    start = grid.index_of(sol.start_time) if sol.start_time > 0 else 0
    kbar = holder_constant_for(inst)
    holder = 0.0
    pairs = [(start, start + 1), (start, grid.n_steps)]
    for _ in range(8):
        i = int(rng.integers(start, grid.n_steps))
        pairs.append((i, int(rng.integers(i + 1, grid.n_steps + 1))))
    for i, j in pairs:
        t, s = float(grid.nodes[i]), float(grid.nodes[j])
        d = path_dist(basis, sol.path.restrict(t) if i > 0 else _point_restriction(sol.path),
                      sol.path.restrict(s), VSTAR)
        holder = max(holder, d / (kbar * (1.0 + sup_xi) * math.sqrt(s - t)))

    # stability: max ||X - Xhat||_H^2 + c2 int ||X - Xhat||_V^2 <= K^2 ||xi - xihat||^2
    sol_hat = solve_state(inst, xi_hat, control, noise, config)
    diff = sol.path.values[start:] - sol_hat.path.values[start:]
    gap0 = max(basis.norm(a - b, H) for a, b in zip(xi.node_values(), xi_hat.node_values()))
    stability = 0.0
    if gap0 > 1e-12:
        max_h = max(basis.norm(d, H) for d in diff) ** 2
        v_en = float(np.trapezoid([basis.norm(d, V) ** 2 for d in diff], dx=config.dt))
        stability = (max_h + cst.c2 * v_en) / (stability_constant(inst) ** 2 * gap0 ** 2)

    # short time, constant low-mode initial data:
    # max ||X - xi(r)||^2 + c2 int <= 2 Ktilde (1 + ||A xi(r)||^2) |s-r|^2 e^{2 c1+ T}
    r = sol.start_time
    xr = xi.end_value()
    a_norm_sq = basis.norm(basis.apply_A(xr), H) ** 2
    kt = short_time_constant(L) * 2.0 * math.exp(2.0 * cst.c1_plus * T)
    short = 0.0
    flat = constant_path(xi.grid, xr)
    sol_flat = solve_state(inst, flat, control, noise, config)
    dev = sol_flat.path.values[start:] - xr
    for j in (1, max(1, (grid.n_steps - start) // 2), grid.n_steps - start):
        s = float(grid.nodes[start + j])
        max_h = max(basis.norm(d, H) for d in dev[: j + 1]) ** 2
        v_en = float(np.trapezoid([basis.norm(d, V) ** 2 for d in dev[: j + 1]], dx=config.dt))
        short = max(short, (max_h + cst.c2 * v_en) /
                    (kt * (1.0 + a_norm_sq) * (s - r) ** 2))
    return EstimateRatios(growth, holder, stability, short)


def _point_restriction(path: Path) -> Path:
    grid = path.grid
    return Path(TimeGrid(grid.t0, float(grid.nodes[1]), 1),
                np.vstack([path.values[:1], path.values[:1]]))


def run_estimate_suite(dim: int, n_draws: int, seed: int,
                       config: SolverConfig = SolverConfig(dt=1.0 / 32),
                       horizon: float = 1.0,
                       low_mode_cut: int = 4, workers: int = 1) -> dict:
    """Randomized suite over (instance, initial path, control) draws.

    Initial paths for the short-time ratio are restricted to the first
    `low_mode_cut` modes so A maps them into H with moderate norm, matching
    the smoothness hypothesis of that estimate.
    """
    basis = SpectralBasis(dim)

    def one_draw(i: int) -> dict:
        rng = rng_for(seed, "estimates", i)
        inst = make_instance(DRAW_ROSTER[i % len(DRAW_ROSTER)], basis, horizon=horizon)
        grid = full_grid(inst, config.dt)
        r_idx = int(rng.integers(1, grid.n_steps // 2 + 1))
        grid_r = TimeGrid(0.0, float(grid.nodes[r_idx]), r_idx)
        low = _random_initial(basis, grid_r, rng)
        mask = np.zeros(basis.dim)
        mask[:low_mode_cut] = 1.0
        xi = Path(grid_r, low.values * mask)
        xi_hat = Path(grid_r, xi.values + 0.5 * mask * rng.standard_normal(basis.dim))
        control = _random_control(inst, float(grid.nodes[r_idx]), rng)
        noise = sample_wiener(grid, inst.m, rng_for(seed, "estimates-noise", i)) \
            if inst.is_random else ZeroNoise(inst.m)
        ratios = measure_ratios(inst, xi, xi_hat, control, noise, config, rng)
        return {"draw": i, "instance": inst.name,
                "growth": ratios.growth, "holder": ratios.holder,
                "stability": ratios.stability, "short_time": ratios.short_time,
                "tail_mass": basis.tail_mass(xi.end_value())}

    rows = ordered_map(one_draw, range(n_draws), workers)
    worst = EstimateRatios(
        max(r["growth"] for r in rows), max(r["holder"] for r in rows),
        max(r["stability"] for r in rows), max(r["short_time"] for r in rows))
    violations = sum(1 for r in rows
                     if max(r["growth"], r["holder"], r["stability"], r["short_time"]) > 1.0)
    return {"rows": rows, "worst": worst, "violations": violations,
            "n_draws": n_draws, "seed": seed}


def control_independence(dim: int, n_draws: int, n_controls: int, seed: int,
                         config: SolverConfig = SolverConfig(dt=1.0 / 32),
                         horizon: float = 1.0) -> dict:
    """Swap the control process over a fixed draw ensemble and compare the
    suite-maximum ratios; the maxima must agree to within 1 percent, i.e. the
    estimate constants never degrade with the control.

    The shared draws carry energetic high-mode initial data so the comparison
    probes the regime where the estimates are tight in A, not in the bounded
    drift (whose trivial first-order control dependence is not what the
    constants are about)."""
    basis = SpectralBasis(dim)
    per_control = []
    for c in range(n_controls):
        worst = EstimateRatios(0.0, 0.0, 0.0, 0.0)
        for i in range(n_draws):
            rng = rng_for(seed, "ctrl-indep", i)
            inst = make_instance(DRAW_ROSTER[i % len(DRAW_ROSTER)], basis, horizon=horizon)
            grid = full_grid(inst, config.dt)
            r_idx = int(rng.integers(1, grid.n_steps // 2 + 1))
            grid_r = TimeGrid(0.0, float(grid.nodes[r_idx]), r_idx)
            mask = np.zeros(basis.dim)
            mask[:4] = np.array([0.2, 0.2, 0.5, 0.3])
            base = _random_initial(basis, grid_r, rng, scale_range=(10.0, 40.0))
            scale = max(np.sqrt((base.values ** 2).sum(axis=1)))
            floor = np.zeros(basis.dim)
            floor[3] = scale                      # guaranteed energetic mode 4
            xi = Path(grid_r, base.values * mask + floor)
            xi_hat = Path(grid_r, xi.values + 0.5 * mask * rng.standard_normal(basis.dim))
            ctrl_rng = rng_for(seed, f"ctrl-indep-c{c}", i)
            control = _random_control(inst, float(grid.nodes[r_idx]), ctrl_rng)
            noise = sample_wiener(grid, inst.m, rng_for(seed, "ctrl-indep-noise", i)) \
                if inst.is_random else ZeroNoise(inst.m)
            ratios = measure_ratios(inst, xi, xi_hat, control, noise, config, rng)
            worst = EstimateRatios(*(max(a, b) for a, b in
                                     zip(worst.__dict__.values(), ratios.__dict__.values())))
        per_control.append(worst)
    spreads = {}
    for name in ("growth", "holder", "stability", "short_time"):
        vals = [getattr(w, name) for w in per_control]
        spreads[name] = (max(vals) - min(vals)) / max(max(vals), 1e-30)
    return {"per_control": per_control, "spreads": spreads,
            "max_spread": max(spreads.values()),
            "max_ratio": max(w.worst() for w in per_control)}
