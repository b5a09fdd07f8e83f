"""Cost and value functionals, the Hamiltonian, and the dynamic-programming
checks, all exact on binomial scenario trees.

The running cost is integrated by the left Riemann rule on the solver grid,
matching both the drift freezing of the integrator and the backward induction
on trees, so the two-stage dynamic-programming decomposition is an arithmetic
identity there.  Ties in every minimisation break toward the lowest control
label, which makes values invariant under relabelling of the control set.

An initial history may be a Path or, for a start at time zero, a bare
coefficient vector (the one-point history).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .dynamics import SolverConfig, full_grid, history_path, solve_state, step_weights
from .paths import Path, TimeGrid
from .problem import (NoiseState, NoiseTree, ProblemInstance, TreeNodeHistory,
                      ZeroNoise, eval_G, eval_beta, eval_f, sample_wiener)
from .seeding import rng_for

EXACT = "exact"
EXACT_TREE = "exact_tree"
EXHAUSTIVE = "exhaustive"
MONTE_CARLO = "monte_carlo"

Initial = Union[Path, np.ndarray]


class SearchBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class OpenLoopControl:
    """Piecewise-constant control: one label per interval of [start, end]."""

    start: float
    end: float
    labels: tuple[int, ...]
    inst: ProblemInstance

    def label_at(self, s: float) -> int:
        width = (self.end - self.start) / len(self.labels)
        i = int((s - self.start) / width + 1e-9)
        return self.labels[min(max(i, 0), len(self.labels) - 1)]

    def __call__(self, s: float, noise: NoiseState) -> float:
        return self.inst.control_set.param(self.label_at(s))


def constant_control(inst: ProblemInstance, label: int,
                     start: float = 0.0) -> OpenLoopControl:
    return OpenLoopControl(start, inst.horizon, (label,), inst)


@dataclass(frozen=True)
class TreePolicy:
    """Adapted control on a scenario tree: a label per (level, node) pair.

    The label at a node may depend only on the W-history encoded by the node
    itself, so adaptedness holds by construction.
    """

    labels: dict[tuple[int, int], int]

    def label(self, level: int, idx: int) -> int:
        return self.labels[(level, idx)]


@dataclass(frozen=True)
class ValueEstimate:
    value: float
    stderr: float
    mode: str
    n_samples: int
    argmin: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.mode in (EXACT, EXACT_TREE, EXHAUSTIVE) and self.stderr != 0.0:
            raise ValueError("exact modes must report zero standard error")


def seed_values(inst: ProblemInstance, init: Initial, grid: TimeGrid) -> tuple[np.ndarray, int]:
    """Node-value array seeded with the initial history; returns (vals, start)."""
    vals = np.zeros((grid.n_steps + 1, inst.basis.dim))
    if isinstance(init, np.ndarray):
        vals[0] = init
        return vals, 0
    start = grid.index_of(init.end_time)
    for i in range(start + 1):
        vals[i] = init.value_at(float(grid.nodes[i]))
    vals[start] = init.end_value()
    return vals, start


def start_time(init: Initial) -> float:
    return 0.0 if isinstance(init, np.ndarray) else init.end_time


def _running_cost(inst: ProblemInstance, vals: np.ndarray, grid: TimeGrid,
                  start: int, control, noise: NoiseState) -> float:
    dt = grid.dt
    total = 0.0
    for i in range(start, grid.n_steps):
        s = float(grid.nodes[i])
        total += dt * eval_f(inst, s, history_path(grid, vals, i), control(s, noise), noise)
    return total


def cost_J(inst: ProblemInstance, init: Initial, control,
           config: SolverConfig = SolverConfig(),
           n_mc: int = 0, seed: int = 0,
           tree: Optional[NoiseTree] = None,
           policy: Optional[TreePolicy] = None) -> ValueEstimate:
    """Dynamic cost of one control strategy from the state history `init`.

    Deterministic data: one solve and exact quadrature.  A scenario tree makes
    the expectation exact over its leaves (adapted policies welcome).  A random
    instance without a tree falls back to Monte Carlo over sampled Wiener paths
    with a reported standard error.
    """
    if tree is not None:
        val = tree_strategy_cost(inst, init, tree, policy=policy, control=control)
        return ValueEstimate(val, 0.0, EXACT_TREE, tree.n_nodes(tree.depth))
    grid = full_grid(inst, config.dt)
    if not inst.is_random:
        noise0 = ZeroNoise(inst.m)
        sol = solve_state(inst, init, control, noise0, config)
        start = 0 if isinstance(init, np.ndarray) else grid.index_of(init.end_time)
        total = _running_cost(inst, sol.path.values, grid, start, control, noise0)
        total += eval_G(inst, sol.path, noise0)
        return ValueEstimate(total, 0.0, EXACT, 1)
    if n_mc < 1:
        raise ValueError("random instance needs a scenario tree or n_mc >= 1")
    samples = np.empty(n_mc)
    start = 0 if isinstance(init, np.ndarray) else grid.index_of(init.end_time)
    for j in range(n_mc):
        w = sample_wiener(grid, inst.m, rng_for(seed, "cost-mc", j))
        sol = solve_state(inst, init, control, w, config)
        samples[j] = _running_cost(inst, sol.path.values, grid, start, control, w) \
            + eval_G(inst, sol.path, w)
    stderr = float(samples.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else 0.0
    return ValueEstimate(float(samples.mean()), stderr, MONTE_CARLO, n_mc)


def value_open_loop(inst: ProblemInstance, init: Initial, n_intervals: int,
                    config: SolverConfig = SolverConfig(),
                    budget: int = 65536) -> ValueEstimate:
    """Exact minimum of the cost over all piecewise-constant open-loop controls
    on `n_intervals` equal intervals of [t, T] (deterministic instances)."""
    if inst.is_random:
        raise ValueError("open-loop exhaustive search needs deterministic data")
    n_controls = len(inst.control_set)
    if n_controls ** n_intervals > budget:
        raise SearchBudgetError(
            f"{n_controls}^{n_intervals} open-loop candidates exceed budget {budget}")
    t = start_time(init)
    best: Optional[float] = None
    best_labels: tuple[int, ...] = ()
    for labels in itertools.product(range(n_controls), repeat=n_intervals):
        ctrl = OpenLoopControl(t, inst.horizon, labels, inst)
        val = cost_J(inst, init, ctrl, config=config).value
        if best is None or val < best - 1e-15:
            best, best_labels = val, labels
    return ValueEstimate(best, 0.0, EXHAUSTIVE, n_controls ** n_intervals,
                         argmin=best_labels)


# ---------------------------------------------------------------------------
# Scenario-tree computations
# ---------------------------------------------------------------------------

def tree_strategy_cost(inst: ProblemInstance, init: Initial, tree: NoiseTree,
                       policy: Optional[TreePolicy] = None,
                       control=None) -> float:
    """Expected cost of one fixed strategy, exact over the tree's leaves."""
    if policy is None and control is None:
        raise ValueError("need a tree policy or an open-loop control")
    grid = tree.grid
    dt = grid.dt
    decay, pulse = step_weights(inst, dt)
    vals, start = seed_values(inst, init, grid)
    if start != 0:
        raise ValueError("fixed-strategy tree cost starts at the root")

    def walk(level: int, idx: int, hist: TreeNodeHistory) -> float:
        if level == tree.depth:
            return eval_G(inst, Path(grid, vals.copy()), hist)
        s = float(grid.nodes[level])
        if policy is not None:
            v = inst.control_set.param(policy.label(level, idx))
        else:
            v = control(s, hist)
        hp = history_path(grid, vals, level)
        run = dt * eval_f(inst, s, hp, v, hist)
        vals[level + 1] = decay * vals[level] + pulse * eval_beta(inst, s, hp, v, hist)
        acc = 0.0
        for j in range(tree.branching):
            acc += walk(level + 1, idx * tree.branching + j, tree.child_history(hist, j))
        return run + acc / tree.branching

    return walk(0, 0, tree.history(0, 0))


def _tree_value_from(inst: ProblemInstance, tree: NoiseTree, vals: np.ndarray,
                     level: int, idx: int, hist: TreeNodeHistory):
    """Backward-induction value from a tree node given the state history in
    vals[: level + 1]; returns (value, optimal policy on the reachable set)."""
    grid = tree.grid
    dt = grid.dt
    decay, pulse = step_weights(inst, dt)
    if level == tree.depth:
        return eval_G(inst, Path(grid, vals.copy()), hist), {}
    s = float(grid.nodes[level])
    hp = history_path(grid, vals, level)
    best = None
    best_policy: dict = {}
    best_label = 0
    for label in range(len(inst.control_set)):
        v = inst.control_set.param(label)
        run = dt * eval_f(inst, s, hp, v, hist)
        vals[level + 1] = decay * vals[level] + pulse * eval_beta(inst, s, hp, v, hist)
        acc = 0.0
        merged: dict = {}
        for j in range(tree.branching):
            child_val, child_pol = _tree_value_from(
                inst, tree, vals, level + 1, idx * tree.branching + j,
                tree.child_history(hist, j))
            acc += child_val
            merged.update(child_pol)
        total = run + acc / tree.branching
        if best is None or total < best - 1e-15:
            best, best_label, best_policy = total, label, merged
    best_policy[(level, idx)] = best_label
    return best, best_policy


def value_adapted_tree(inst: ProblemInstance, init: Initial, tree: NoiseTree,
                       hist: Optional[TreeNodeHistory] = None,
                       node_idx: int = 0) -> tuple[ValueEstimate, TreePolicy]:
    """Essential infimum over adapted tree controls by backward induction: at
    each node the minimum over controls of running cost plus the mean of child
    values, with the state re-solved along the node's control history.

    `init` is the state history up to the start level; `hist`/`node_idx` locate
    the starting node (the root by default).
    """
    vals, start = seed_values(inst, init, tree.grid)
    if hist is None:
        hist = tree.history(start, node_idx)
    val, pol = _tree_value_from(inst, tree, vals, start, node_idx, hist)
    n_scen = tree.branching ** (tree.depth - start)
    return ValueEstimate(val, 0.0, EXACT_TREE, n_scen), TreePolicy(pol)


def value_brute_force(inst: ProblemInstance, init: Initial, tree: NoiseTree,
                      budget: int = 100000) -> tuple[float, TreePolicy]:
    """Oracle: enumerate every map from internal nodes to control labels and
    take the cheapest expected cost.  Feasible only for tiny trees."""
    internal = [(lvl, idx) for lvl in range(tree.depth) for idx in range(tree.n_nodes(lvl))]
    n_controls = len(inst.control_set)
    if n_controls ** len(internal) > budget:
        raise SearchBudgetError(
            f"{n_controls}^{len(internal)} strategies exceed budget {budget}")
    best = None
    best_policy = None
    for assignment in itertools.product(range(n_controls), repeat=len(internal)):
        policy = TreePolicy(dict(zip(internal, assignment)))
        val = tree_strategy_cost(inst, init, tree, policy=policy)
        if best is None or val < best - 1e-15:
            best, best_policy = val, policy
    return best, best_policy


def hamiltonian(inst: ProblemInstance, t: float, x_t: Path, p: np.ndarray,
                noise: Optional[NoiseState] = None) -> tuple[float, int]:
    """min over controls of <Ax(t), p> + <beta(t,x,v), p> + f(t,x,v); ties break
    toward the lowest label."""
    noise = noise or ZeroNoise(inst.m)
    basis = inst.basis
    ax_term = basis.pairing(basis.apply_A(x_t.end_value()), p)
    best, best_label = None, 0
    for label in range(len(inst.control_set)):
        v = inst.control_set.param(label)
        val = ax_term + basis.pairing(eval_beta(inst, t, x_t, v, noise), p) \
            + eval_f(inst, t, x_t, v, noise)
        if best is None or val < best - 1e-15:
            best, best_label = val, label
    return best, best_label


def check_dpp(inst: ProblemInstance, init: Initial, tree: NoiseTree,
              t: float, t_hat: float) -> float:
    """Two-stage dynamic-programming gap at deterministic grid times t <= t_hat:

        | V(t, xi) - min over adapted controls of
            E[ sum f dt over [t, t_hat) + V(t_hat, X_(t_hat)) ] |

    evaluated at every tree node of level(t); returns the worst gap.
    """
    grid = tree.grid
    l0 = grid.index_of(t) if t > grid.t0 + 1e-12 else 0
    l1 = grid.index_of(t_hat) if t_hat > grid.t0 + 1e-12 else 0
    if not l0 <= l1 <= tree.depth:
        raise ValueError("need t <= t_hat <= T on the tree grid")
    dt = grid.dt
    decay, pulse = step_weights(inst, dt)
    worst = 0.0
    for idx0 in range(tree.n_nodes(l0)):
        hist0 = tree.history(l0, idx0)
        vals, start = seed_values(inst, init, grid)
        if start != l0:
            raise ValueError("initial history must end at time t")
        left = _tree_value_from(inst, tree, vals.copy(), l0, idx0, hist0)[0]

        def two_stage(level: int, idx: int, hist: TreeNodeHistory) -> float:
            if level == l1:
                return _tree_value_from(inst, tree, vals, level, idx, hist)[0]
            s = float(grid.nodes[level])
            hp = history_path(grid, vals, level)
            best = None
            for label in range(len(inst.control_set)):
                v = inst.control_set.param(label)
                run = dt * eval_f(inst, s, hp, v, hist)
                vals[level + 1] = decay * vals[level] + pulse * eval_beta(inst, s, hp, v, hist)
                acc = 0.0
                for j in range(tree.branching):
                    acc += two_stage(level + 1, idx * tree.branching + j,
                                     tree.child_history(hist, j))
                total = run + acc / tree.branching
                if best is None or total < best:
                    best = total
            return best

        right = two_stage(l0, idx0, hist0)
        worst = max(worst, abs(left - right))
    return worst


def check_supermartingale(inst: ProblemInstance, x0: np.ndarray, tree: NoiseTree,
                          policy: TreePolicy) -> dict:
    """Along the state driven by a fixed adapted policy, measure at every node

        E[ V(t+dt, X_(t+dt)) ] + E[ f dt ] - V(t, X_t)

    whose negative part must vanish (supermartingale of the value plus running
    cost); the optimal policy also kills the positive part.  Returns the worst
    violation and the observed drift range.
    """
    grid = tree.grid
    dt = grid.dt
    decay, pulse = step_weights(inst, dt)
    vals = np.zeros((grid.n_steps + 1, inst.basis.dim))
    vals[0] = x0
    out = {"max_violation": 0.0, "max_drift": 0.0, "min_drift": math.inf}

    def walk(level: int, idx: int, hist: TreeNodeHistory):
        if level == tree.depth:
            return
        v_here = _tree_value_from(inst, tree, vals.copy(), level, idx, hist)[0]
        s = float(grid.nodes[level])
        u = inst.control_set.param(policy.label(level, idx))
        hp = history_path(grid, vals, level)
        run = dt * eval_f(inst, s, hp, u, hist)
        vals[level + 1] = decay * vals[level] + pulse * eval_beta(inst, s, hp, u, hist)
        acc = 0.0
        for j in range(tree.branching):
            acc += _tree_value_from(inst, tree, vals.copy(), level + 1,
                                    idx * tree.branching + j,
                                    tree.child_history(hist, j))[0]
        drift = acc / tree.branching + run - v_here
        out["max_violation"] = max(out["max_violation"], max(-drift, 0.0))
        out["max_drift"] = max(out["max_drift"], drift)
        out["min_drift"] = min(out["min_drift"], drift)
        for j in range(tree.branching):
            walk(level + 1, idx * tree.branching + j, tree.child_history(hist, j))

    walk(0, 0, tree.history(0, 0))
    if out["min_drift"] is math.inf:
        out["min_drift"] = 0.0
    return out


def lipschitz_value_constant(inst: ProblemInstance) -> float:
    """Candidate path-Lipschitz constant of the value map, assembled from the
    initial-path stability constant and the coefficient moduli: K*L*(1+T)."""
    from .estimates import stability_constant

    return stability_constant(inst) * inst.coeffs.L * (1.0 + inst.horizon)


def check_value_regularity(inst: ProblemInstance, n_probes: int, seed: int,
                           n_intervals: int = 2,
                           config: SolverConfig = SolverConfig(dt=1.0 / 16)) -> dict:
    """Uniform bound |V| <= L(T+1) on probe points and the measured
    path-Lipschitz ratio of V against the assembled candidate constant."""
    from .paths import PathClassSpec, constant_path, sample_path_class

    if inst.is_random:
        raise ValueError("regularity probes need deterministic data")
    basis = inst.basis
    grid = full_grid(inst, config.dt)
    rng = rng_for(seed, "value-regularity")
    bound = inst.coeffs.L * (inst.horizon + 1.0)
    lip_bound = lipschitz_value_constant(inst)
    out = {"max_abs_value": 0.0, "value_bound": bound,
           "max_lipschitz_ratio": 0.0, "lipschitz_bound": lip_bound,
           "n_probes": n_probes}
    anchor_grid = TimeGrid(0.0, config.dt, 1)
    for _ in range(n_probes):
        i = int(rng.integers(1, grid.n_steps))
        t = float(grid.nodes[i])
        anchor = constant_path(anchor_grid, rng.standard_normal(basis.dim) * 0.3)
        spec = PathClassSpec(basis, k=1.0, anchor=anchor, horizon=t)
        x = sample_path_class(spec, rng)
        y = sample_path_class(spec, rng)
        vx = value_open_loop(inst, x, n_intervals, config).value
        vy = value_open_loop(inst, y, n_intervals, config).value
        out["max_abs_value"] = max(out["max_abs_value"], abs(vx), abs(vy))
        gap = max(basis.norm(a - b, "H") for a, b in zip(x.node_values(), y.node_values()))
        if gap > 1e-9:
            out["max_lipschitz_ratio"] = max(out["max_lipschitz_ratio"],
                                             abs(vx - vy) / gap)
    return out
