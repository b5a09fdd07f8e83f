"""Finite-dimensional approximation machinery and the two-sided envelope of
the value function built from it.

Coefficient freezing composes three contractions and measures what they cost:

  * the path argument is replaced by its piecewise freezing on fixed dyadic
    cells of the full horizon (width T/2^M, endpoint kept), so every frozen
    coefficient is a function of finitely many path snapshots at anchor times
    that do not move with the evaluation time;
  * the noise argument is frozen at the N-partition anchors j*T/N;
  * the drift output is band-limited to the first d modes.

The regularised value solves the frozen, band-limited control problem with an
independent binomial noise of size delta injected into the retained modes, by
exact backward induction on the product tree.  Error processes measured as
ensemble suprema over a sampled drift-bounded path class feed deterministic
correction integrals, and together with the noise correction they dominate the
unfrozen value from above and below.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import SolverConfig, history_path, step_weights
from .estimates import growth_constant_sq, holder_constant
from .paths import Path, PathClassSpec, TimeGrid, sample_path_class
from .problem import (CoefficientSet, NoiseState, ProblemInstance,
                      TreeNodeHistory, ZeroNoise, eval_G, eval_beta, eval_f,
                      sample_wiener)
from .seeding import rng_for
from .spectral import H, V, VSTAR
from .value import SearchBudgetError, seed_values, value_open_loop


@dataclass(frozen=True)
class ApproxConfig:
    n_partition: int            # noise anchor count N
    dyadic_level: int           # path-freezing level M
    proj_dim: int               # band limit d
    class_bound: float          # drift bound k of the probe path class
    x0: np.ndarray              # anchor initial state
    ensemble: int = 256
    active_modes: int = 8

    def __post_init__(self):
        if self.n_partition <= 3:
            raise ValueError("the time partition needs more than 3 cells")
        if self.dyadic_level < 0 or self.proj_dim < 1 or self.class_bound < 0:
            raise ValueError("bad approximation parameters")


class FrozenPathView:
    """x with its values replaced by the fixed-cell dyadic freezing; the
    endpoint value is kept exactly."""

    __slots__ = ("_x", "_cell", "end_time")

    def __init__(self, x, cell: float):
        self._x = x
        self._cell = cell
        self.end_time = x.end_time

    def value_at(self, s: float):
        if s >= self.end_time - 1e-9:
            return self._x.end_value()
        return self._x.value_at(math.floor(s / self._cell + 1e-9) * self._cell)

    def end_value(self):
        return self._x.end_value()


class WindowView:
    """Restriction of a path to [0, t] without copying."""

    __slots__ = ("_x", "end_time")

    def __init__(self, x, t: float):
        self._x = x
        self.end_time = t

    def value_at(self, s: float):
        return self._x.value_at(min(s, self.end_time))

    def end_value(self):
        return self._x.value_at(self.end_time)


class AnchorNoiseView:
    """Noise state frozen at the partition anchors j*T/N."""

    __slots__ = ("_noise", "_width")

    def __init__(self, noise: NoiseState, width: float):
        self._noise = noise
        self._width = width

    def w_at(self, s: float) -> np.ndarray:
        return self._noise.w_at(math.floor(s / self._width + 1e-9) * self._width)


def build_frozen(inst: ProblemInstance, config: ApproxConfig) -> ProblemInstance:
    """Instance with frozen/band-limited coefficients.  The frozen maps retain
    the bound and Lipschitz constant of the originals (freezing and projection
    are contractions), so the frozen Lipschitz constant is L itself."""
    if config.proj_dim > inst.basis.dim:
        raise ValueError("projection dimension exceeds the ambient dimension")
    cell = inst.horizon / (2 ** config.dyadic_level)
    anchor_width = inst.horizon / config.n_partition
    basis = inst.basis
    orig = inst.coeffs
    d = config.proj_dim

    def beta(t, x, v, noise):
        out = orig.beta(t, FrozenPathView(x, cell), v, AnchorNoiseView(noise, anchor_width))
        return basis.project(out, d)

    def f(t, x, v, noise):
        return orig.f(t, FrozenPathView(x, cell), v, AnchorNoiseView(noise, anchor_width))

    def G(x, noise):
        return orig.G(FrozenPathView(x, cell), AnchorNoiseView(noise, anchor_width))

    coeffs = CoefficientSet(
        name=f"{orig.name}-frozen(N={config.n_partition},M={config.dyadic_level},d={d})",
        beta=beta, f=f, G=G, L=orig.L, is_random=orig.is_random,
        lipschitz_space=orig.lipschitz_space)
    return ProblemInstance(basis, coeffs, inst.control_set, inst.horizon, m=inst.m)


@dataclass(frozen=True)
class ApproxErrorReport:
    times: np.ndarray
    f_err: np.ndarray
    beta_err: np.ndarray
    g_err: float
    l2_f: float
    l2_beta: float
    l2_g: float
    freeze_sup: float
    freeze_bound: float
    class_bound: float
    x0_norm: float

    def budget(self, eps: float) -> float:
        return eps * (1.0 + self.class_bound) * (1.0 + self.x0_norm)


def class_holder_constant(inst: ProblemInstance, k: float) -> float:
    """Square-root modulus constant of the drift-bounded path class, assembled
    exactly like the state estimate with the drift bound in place of L."""
    cst = inst.constants
    return holder_constant(k, inst.horizon, cst.c, cst.c1_plus, cst.c2, cst.c3)


def sample_class_ensemble(inst: ProblemInstance, config: ApproxConfig,
                          grid: TimeGrid, seed: int, size: Optional[int] = None) -> list[Path]:
    spec = PathClassSpec(inst.basis, config.class_bound, config.x0, inst.horizon,
                         active_modes=config.active_modes, n_steps=grid.n_steps)
    n = config.ensemble if size is None else size
    return [sample_path_class(spec, rng_for(seed, "class-ensemble", i)) for i in range(n)]


def measure_errors(inst: ProblemInstance, frozen: ProblemInstance,
                   config: ApproxConfig, grid: TimeGrid, seed: int,
                   n_noise: int = 4) -> ApproxErrorReport:
    """Per-time ensemble-sup errors of the frozen coefficients against the
    originals over a sampled path-class ensemble, their time-L2 aggregates,
    and the freezing gap against its square-root bound.

    The suprema are over the explicit ensemble (and sampled noise draws for
    random data), a declared under-approximation of the essential suprema.
    """
    basis = inst.basis
    ensemble = sample_class_ensemble(inst, config, grid, seed)
    noises: list[NoiseState] = [ZeroNoise(inst.m)]
    if inst.is_random:
        noises = [sample_wiener(grid, inst.m, rng_for(seed, "err-noise", j))
                  for j in range(n_noise)]
    n = grid.n_steps
    f_err = np.zeros(n + 1)
    b_err = np.zeros(n + 1)
    g_err = 0.0
    cell = inst.horizon / (2 ** config.dyadic_level)
    freeze_sup = 0.0
    for x in ensemble:
        fx = FrozenPathView(x, cell)
        freeze_sup = max(freeze_sup,
                         max(basis.norm(np.asarray(x.value_at(s)) - np.asarray(fx.value_at(s)),
                                        VSTAR)
                             for s in grid.nodes))
        for i in range(n + 1):
            t = float(grid.nodes[i])
            window = WindowView(x, t) if i > 0 else WindowView(x, 0.0)
            for noise in noises:
                for label in range(len(inst.control_set)):
                    v = inst.control_set.param(label)
                    f_err[i] = max(f_err[i], abs(
                        frozen.coeffs.f(t, window, v, noise) - inst.coeffs.f(t, window, v, noise)))
                    db = frozen.coeffs.beta(t, window, v, noise) \
                        - inst.coeffs.beta(t, window, v, noise)
                    b_err[i] = max(b_err[i], basis.norm(db, VSTAR))
        for noise in noises:
            g_err = max(g_err, abs(frozen.coeffs.G(x, noise) - inst.coeffs.G(x, noise)))
    dt = grid.dt
    l2_f = float(math.sqrt(np.sum(f_err[:-1] ** 2) * dt))
    l2_b = float(math.sqrt(np.sum(b_err[:-1] ** 2) * dt))
    x0_norm = basis.norm(config.x0, H)
    bound = class_holder_constant(inst, config.class_bound) * (1.0 + x0_norm) \
        * math.sqrt(inst.horizon / (2 ** config.dyadic_level))
    return ApproxErrorReport(np.asarray(grid.nodes), f_err, b_err, g_err,
                             l2_f, l2_b, g_err, freeze_sup, bound,
                             config.class_bound, x0_norm)


def projection_error_sup(inst: ProblemInstance, d_list: list[int],
                         config: ApproxConfig, grid: TimeGrid, seed: int) -> dict:
    """Worst band-limiting error of the drift outputs over the ensemble per
    projection dimension, with the coordinate-wise tail bound and the analytic
    witness a_i = 1/i evaluated against its tail-sum value."""
    basis = inst.basis
    if sorted(d_list) != list(d_list):
        raise ValueError("d_list must be increasing")
    ensemble = sample_class_ensemble(inst, config, grid, seed,
                                     size=min(config.ensemble, 32))
    noise = ZeroNoise(inst.m)
    outputs = []
    for x in ensemble:
        for i in (grid.n_steps // 2, grid.n_steps):
            t = float(grid.nodes[i])
            window = WindowView(x, t)
            for label in range(len(inst.control_set)):
                outputs.append(inst.coeffs.beta(t, window, inst.control_set.param(label), noise))
    lam = basis.eigenvalues
    witness = np.zeros(basis.dim)
    wn = min(8, basis.dim)
    witness[:wn] = 1.0 / np.arange(1, wn + 1)
    rows = []
    for d in d_list:
        sup_err = max((basis.norm(h - basis.project(h, d), VSTAR) for h in outputs),
                      default=0.0)
        max_h = max((basis.norm(h, H) for h in outputs), default=0.0)
        coord_bound = max_h / math.sqrt(1.0 + lam[d]) if d < basis.dim else 0.0
        wit_err = basis.norm(witness - basis.project(witness, d), VSTAR)
        wit_oracle = math.sqrt(sum((1.0 / i ** 2) / (1.0 + (i * math.pi) ** 2)
                                   for i in range(d + 1, wn + 1)))
        rows.append({"d": d, "sup_err": sup_err, "coord_bound": coord_bound,
                     "witness_err": wit_err, "witness_oracle": wit_oracle})
    return {"rows": rows, "n_outputs": len(outputs)}


# ---------------------------------------------------------------------------
# Regularised value on the product tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SandwichParams:
    delta: float
    l_tilde: float      # measured gradient bound of the regularised value
    l_c: float          # frozen Lipschitz constant

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must lie in [0, 1)")

    @property
    def c1(self) -> float:
        return self.l_tilde

    @property
    def c2(self) -> float:
        return 4.0 * self.l_c * (self.l_tilde + 1.0)


def _b_step_increments(d: int, dt: float) -> np.ndarray:
    root = math.sqrt(dt)
    out = np.empty((2 ** d, d))
    for j in range(2 ** d):
        for c in range(d):
            out[j, c] = root if (j >> c) & 1 else -root
    return out


def solve_regularized_value(frozen: ProblemInstance, init, grid: TimeGrid,
                            delta: float, d: int,
                            start_level: int = 0,
                            w_tree=None, w_hist: Optional[TreeNodeHistory] = None,
                            node_budget: int = 200000) -> float:
    """Value of the frozen band-limited problem with independent binomial noise
    of size delta in the retained modes, by backward induction over the product
    of the W-factor (coefficients) and the B-factor (state).

    `init` is the state history up to the start level; the B noise is fresh
    from there on (any realised B shift belongs in `init`).
    """
    inst = frozen
    b_branch = 2 ** d if delta > 0 else 1
    w_branch = w_tree.branching if w_tree is not None else 1
    depth = grid.n_steps
    n_controls = len(inst.control_set)
    if ((b_branch * w_branch * n_controls) ** (depth - start_level)) > node_budget:
        raise SearchBudgetError("product tree exceeds the node budget")
    b_inc = _b_step_increments(d, grid.dt) if delta > 0 else np.zeros((1, d))
    decay, pulse = step_weights(inst, grid.dt)
    vals, start = seed_values(inst, init, grid)
    if start != start_level:
        raise ValueError("initial history must end at the start level")
    if w_hist is None:
        w_hist = w_tree.history(start_level, 0) if w_tree is not None \
            else TreeNodeHistory(np.asarray(grid.nodes[: start_level + 1]),
                                 np.zeros((start_level + 1, inst.m)))

    def node_value(level: int, hist: TreeNodeHistory) -> float:
        if level == depth:
            return eval_G(inst, Path(grid, vals.copy()), hist)
        s = float(grid.nodes[level])
        hp = history_path(grid, vals, level)
        best = None
        for label in range(n_controls):
            v = inst.control_set.param(label)
            run = grid.dt * eval_f(inst, s, hp, v, hist)
            base = decay * vals[level] + pulse * eval_beta(inst, s, hp, v, hist)
            acc = 0.0
            for jw in range(w_branch):
                child_hist = w_tree.child_history(hist, jw) if w_tree is not None \
                    else TreeNodeHistory(np.asarray(grid.nodes[: len(hist.times) + 1]),
                                         np.vstack([hist.values, hist.values[-1]]))
                for jb in range(b_branch):
                    vals[level + 1] = base
                    vals[level + 1, :d] += delta * b_inc[jb]
                    acc += node_value(level + 1, child_hist)
            total = run + acc / (w_branch * b_branch)
            if best is None or total < best - 1e-15:
                best = total
        return best

    return node_value(start_level, w_hist)


def measure_gradient_bound(frozen: ProblemInstance, grid: TimeGrid, delta: float,
                           d: int, probes: list[np.ndarray], h: float = 1e-4,
                           w_tree=None) -> float:
    """Sup over probe initial states of the V-norm of the finite-difference
    gradient of the regularised value in the retained coordinates."""
    lam = frozen.basis.eigenvalues
    worst = 0.0
    for x0 in probes:
        g_sq = 0.0
        for i in range(d):
            e = np.zeros(frozen.basis.dim)
            e[i] = h
            vp = solve_regularized_value(frozen, frozen.basis.project(x0 + e, d),
                                         grid, delta, d, w_tree=w_tree)
            vm = solve_regularized_value(frozen, frozen.basis.project(x0 - e, d),
                                         grid, delta, d, w_tree=w_tree)
            g_sq += (1.0 + lam[i]) * ((vp - vm) / (2 * h)) ** 2
        worst = max(worst, math.sqrt(g_sq))
    return worst


def correction_process(report: ApproxErrorReport, c1: float) -> np.ndarray:
    """Deterministic correction integral on the report's grid:

        Y(s) = G-err + sum over [s, T) of (f-err + c1 * beta-err) dt

    (left rule, exact for piecewise-constant error processes).  The martingale
    integrand of the underlying backward equation vanishes identically because
    the error processes are deterministic per ensemble.
    """
    times = report.times
    dt = float(times[1] - times[0])
    integrand = report.f_err + c1 * report.beta_err
    n = len(times) - 1
    y = np.empty(n + 1)
    y[n] = report.g_err
    for i in range(n - 1, -1, -1):
        y[i] = y[i + 1] + dt * integrand[i]
    return y


def b_noise_correction(grid: TimeGrid, d: int) -> dict[tuple[int, int], float]:
    """Conditional expectation, at every B-tree node, of the running-sup
    functional  max_t ||B(t)|| + integral of the running sup  (left rule),
    computed exactly by scenario enumeration."""
    depth = grid.n_steps
    dt = grid.dt
    inc = _b_step_increments(d, dt)
    branch = 2 ** d
    scen_payoff: dict[tuple[int, ...], float] = {}
    runmax_by_prefix: dict[tuple[int, ...], float] = {(): 0.0}
    out: dict[tuple[int, int], list[float]] = {}
    for scen in itertools.product(range(branch), repeat=depth):
        b = np.zeros(d)
        runmax = 0.0
        runmaxes = [0.0]
        for j in scen:
            b = b + inc[j]
            runmax = max(runmax, float(np.linalg.norm(b)))
            runmaxes.append(runmax)
        total = runmaxes[-1]
        for level in range(depth + 1):
            idx = 0
            for j in scen[:level]:
                idx = idx * branch + j
            tail = total + dt * sum(runmaxes[level:depth])
            out.setdefault((level, idx), []).append(tail)
    return {key: float(np.mean(vals)) for key, vals in out.items()}


def b_node_path(grid: TimeGrid, d: int, level: int, idx: int) -> np.ndarray:
    """Realised B values (level+1, d) along one node path of the B-tree."""
    inc = _b_step_increments(d, grid.dt)
    branch = 2 ** d
    digits = []
    for _ in range(level):
        digits.append(idx % branch)
        idx //= branch
    digits.reverse()
    vals = np.zeros((level + 1, d))
    for i, j in enumerate(digits):
        vals[i + 1] = vals[i] + inc[j]
    return vals


@dataclass(frozen=True)
class SandwichProbe:
    level: int
    b_node: int
    value: float
    lower: float
    upper: float

    @property
    def gap(self) -> float:
        return self.upper - self.lower

    @property
    def ordered(self) -> bool:
        return self.lower <= self.value + 1e-12 and self.value <= self.upper + 1e-12


def sandwich_check(inst: ProblemInstance, config: ApproxConfig,
                   params: SandwichParams, depth: int, n_probes: int,
                   seed: int, report: Optional[ApproxErrorReport] = None) -> dict:
    """Verify lower envelope <= value <= upper envelope at sampled probe points
    (t, x_t) of the drift-bounded class, at every B-node of the probe's level.

        upper = V_reg(t, projected x - delta B) + Y(t) + delta C2 y(t, node)
        lower = V_reg(t, projected x - delta B) - Y(t) - delta C2 y(t, node)

    When the ordering fails the report states whether inflating the measured
    error budget restores it (the ensemble-sup may undershoot the true sup).
    """
    if inst.is_random:
        raise ValueError("the envelope check drives deterministic instances")
    basis = inst.basis
    grid = TimeGrid(0.0, inst.horizon, depth)
    frozen = build_frozen(inst, config)
    if report is None:
        report = measure_errors(inst, frozen, config, grid, seed)
    d, delta = config.proj_dim, params.delta
    y_corr = correction_process(report, params.c1)
    b_y = b_noise_correction(grid, d) if delta > 0 else {}
    ensemble = sample_class_ensemble(inst, config, grid, seed + 1, size=n_probes)
    rng = rng_for(seed, "sandwich-probes")
    probes: list[SandwichProbe] = []
    config_solver = SolverConfig(dt=grid.dt)
    for p_idx in range(n_probes):
        x_full = ensemble[p_idx]
        level = int(rng.integers(0, depth))
        if level == 0:
            init = np.asarray(config.x0, dtype=float)
        else:
            init = x_full.restrict(float(grid.nodes[level]))
        v_true = value_open_loop(inst, init, depth - level, config_solver).value
        n_bnodes = (2 ** d) ** level if delta > 0 else 1
        for b_idx in range(n_bnodes):
            bpath = b_node_path(grid, d, level, b_idx) if delta > 0 \
                else np.zeros((level + 1, d))
            if isinstance(init, np.ndarray):
                shifted = basis.project(init, d)   # B(0) = 0: no realised shift
            else:
                vals = np.stack([basis.project(v, d) for v in init.node_values()])
                vals[:, :d] -= delta * bpath
                shifted = Path(init.grid, vals)
            v_reg = solve_regularized_value(frozen, shifted, grid, delta, d,
                                            start_level=level)
            corr = y_corr[level] + delta * params.c2 * b_y.get((level, b_idx), 0.0)
            probes.append(SandwichProbe(level, b_idx, v_true,
                                        v_reg - corr, v_reg + corr))
    violations = [p for p in probes if not p.ordered]
    inflation = None
    if violations:
        for factor in (1.5, 2.0, 4.0, 8.0):
            ok = all(p.lower - (factor - 1) * (p.gap / 2) <= p.value + 1e-12
                     and p.value <= p.upper + (factor - 1) * (p.gap / 2) + 1e-12
                     for p in probes)
            if ok:
                inflation = factor
                break
    return {"probes": probes, "violations": len(violations),
            "max_gap": max((p.gap for p in probes), default=0.0),
            "mean_gap": float(np.mean([p.gap for p in probes])) if probes else 0.0,
            "budget_inflation_to_restore": inflation,
            "report": report}
