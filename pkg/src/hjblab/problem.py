"""Problem data: coefficients (drift, running cost, terminal cost) with their
declared bound/Lipschitz constant, the finite control set, Wiener noise as
sampled paths and as binomial scenario trees, and the built-in instances.

Noise dependence is always funneled through an explicit noise-state argument
(the W-history so far), never hidden global state, so adaptedness is checkable
and every evaluation is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .paths import Path, TimeGrid, _T_EPS
from .spectral import H, VSTAR, GelfandConstants, SpectralBasis


class CoefficientBoundError(RuntimeError):
    """A built-in violated its declared uniform bound; never clamped."""


class NoiseState(Protocol):
    def w_at(self, s: float) -> np.ndarray: ...


@dataclass(frozen=True)
class ZeroNoise:
    m: int = 1

    def w_at(self, s: float) -> np.ndarray:
        return np.zeros(self.m)


@dataclass(frozen=True)
class WienerPath:
    grid: TimeGrid
    m: int
    increments: np.ndarray      # (n_steps, m), N(0, dt) entries

    def __post_init__(self):
        inc = np.ascontiguousarray(self.increments, dtype=float)
        if inc.shape != (self.grid.n_steps, self.m):
            raise ValueError("increments must be (n_steps, m)")
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)

    @cached_property
    def values(self) -> np.ndarray:
        vals = np.vstack([np.zeros((1, self.m)), np.cumsum(self.increments, axis=0)])
        vals.flags.writeable = False
        return vals

    def w_at(self, s: float) -> np.ndarray:
        """Left-node (càdlàg) lookup; frozen at the endpoint past the grid."""
        s = min(s, self.grid.t1)
        return self.values[self.grid.left_index(s)]


def sample_wiener(grid: TimeGrid, m: int, rng: np.random.Generator) -> WienerPath:
    if m < 1:
        raise ValueError("noise dimension must be >= 1")
    inc = rng.normal(0.0, math.sqrt(grid.dt), size=(grid.n_steps, m))
    return WienerPath(grid, m, inc)


@dataclass(frozen=True)
class TreeNodeHistory:
    """W observed along one scenario-tree node path: values at node times."""

    times: np.ndarray       # (level + 1,)
    values: np.ndarray      # (level + 1, m)

    def w_at(self, s: float) -> np.ndarray:
        idx = int(np.searchsorted(self.times, s + _T_EPS) - 1)
        return self.values[min(max(idx, 0), len(self.times) - 1)]


@dataclass(frozen=True)
class NoiseTree:
    """Binomial discretization of the Wiener filtration: 2^m children per node,
    per-component increments +-sqrt(dt), uniform probabilities.  First two
    moments per step match Brownian motion exactly."""

    grid: TimeGrid
    m: int
    node_budget: int = 4096

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("noise dimension must be >= 1")
        if self.branching ** self.grid.n_steps > self.node_budget:
            raise ValueError(
                f"tree with {self.branching ** self.grid.n_steps} leaves exceeds "
                f"node budget {self.node_budget}")

    @property
    def depth(self) -> int:
        return self.grid.n_steps

    @property
    def branching(self) -> int:
        return 2 ** self.m

    def n_nodes(self, level: int) -> int:
        return self.branching ** level

    @cached_property
    def step_increments(self) -> np.ndarray:
        """(branching, m) array of one-step increments, child j component c
        taking +sqrt(dt) when bit c of j is set."""
        root_dt = math.sqrt(self.grid.dt)
        out = np.empty((self.branching, self.m))
        for j in range(self.branching):
            for c in range(self.m):
                out[j, c] = root_dt if (j >> c) & 1 else -root_dt
        out.flags.writeable = False
        return out

    def digits(self, level: int, idx: int) -> list[int]:
        """Branch choices from the root down to a node."""
        out = []
        for _ in range(level):
            out.append(idx % self.branching)
            idx //= self.branching
        return list(reversed(out))

    def history(self, level: int, idx: int) -> TreeNodeHistory:
        w = np.zeros((level + 1, self.m))
        for step, j in enumerate(self.digits(level, idx)):
            w[step + 1] = w[step] + self.step_increments[j]
        return TreeNodeHistory(self.grid.nodes[: level + 1], w)

    def child_history(self, hist: TreeNodeHistory, j: int) -> TreeNodeHistory:
        lvl = len(hist.times)
        return TreeNodeHistory(
            self.grid.nodes[: lvl + 1],
            np.vstack([hist.values, hist.values[-1] + self.step_increments[j]]),
        )

    def expectation(self, leaf_values: np.ndarray) -> float:
        leaf_values = np.asarray(leaf_values, dtype=float)
        if leaf_values.shape != (self.n_nodes(self.depth),):
            raise ValueError("need one value per leaf")
        return float(np.mean(leaf_values))

    def condition(self, leaf_values: np.ndarray, level: int) -> np.ndarray:
        """Conditional expectation of a leaf function given the level-`level`
        node: plain averaging over each node's descendant block."""
        leaf_values = np.asarray(leaf_values, dtype=float)
        block = self.branching ** (self.depth - level)
        return leaf_values.reshape(self.n_nodes(level), block).mean(axis=1)


def build_noise_tree(grid: TimeGrid, m: int, node_budget: int = 4096) -> NoiseTree:
    return NoiseTree(grid, m, node_budget)


# ---------------------------------------------------------------------------
# Coefficients and instances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ControlSet:
    """Finite control set: label i maps to the real parameter params[i]."""

    params: tuple[float, ...] = (-1.0, 0.0, 1.0)

    def __post_init__(self):
        if len(self.params) < 1:
            raise ValueError("control set must be nonempty")

    def __len__(self) -> int:
        return len(self.params)

    def param(self, label: int) -> float:
        return self.params[label]


@dataclass(frozen=True)
class CoefficientSet:
    name: str
    beta: Callable[[float, Path, float, NoiseState], np.ndarray]
    f: Callable[[float, Path, float, NoiseState], float]
    G: Callable[[Path, NoiseState], float]
    L: float
    is_random: bool = False
    lipschitz_space: str = H


@dataclass(frozen=True)
class ProblemInstance:
    basis: SpectralBasis
    coeffs: CoefficientSet
    control_set: ControlSet
    horizon: float
    m: int = 1

    @property
    def constants(self) -> GelfandConstants:
        return self.basis.constants

    @property
    def name(self) -> str:
        return self.coeffs.name

    @property
    def is_random(self) -> bool:
        return self.coeffs.is_random


def eval_beta(inst: ProblemInstance, t: float, x_t: Path, v: float,
              noise: NoiseState) -> np.ndarray:
    b = inst.coeffs.beta(t, x_t, v, noise)
    if inst.basis.norm(b, H) > inst.coeffs.L + 1e-9:
        raise CoefficientBoundError(
            f"{inst.name}: ||beta||_H = {inst.basis.norm(b, H)} exceeds L = {inst.coeffs.L}")
    return b


def eval_f(inst: ProblemInstance, t: float, x_t: Path, v: float,
           noise: NoiseState) -> float:
    val = inst.coeffs.f(t, x_t, v, noise)
    if abs(val) > inst.coeffs.L + 1e-9:
        raise CoefficientBoundError(
            f"{inst.name}: |f| = {val} exceeds L = {inst.coeffs.L}")
    return val


def eval_G(inst: ProblemInstance, x_T: Path, noise: NoiseState) -> float:
    val = inst.coeffs.G(x_T, noise)
    if abs(val) > inst.coeffs.L + 1e-9:
        raise CoefficientBoundError(
            f"{inst.name}: |G| = {val} exceeds L = {inst.coeffs.L}")
    return val


class _ShiftedPathView:
    """Lazy view of x + eta used by the shifted-coefficient construction."""

    def __init__(self, x: Path, shift: Callable[[float], np.ndarray]):
        self._x = x
        self._shift = shift
        self.end_time = x.end_time

    def value_at(self, s: float) -> np.ndarray:
        return self._x.value_at(s) + self._shift(s)

    def end_value(self) -> np.ndarray:
        return self._x.end_value() + self._shift(self.end_time)


def _clamp(val: float, bound: float) -> float:
    return min(bound, max(-bound, val))


# Catalog of scalar functionals of the path (used for f and G).  Each entry
# is bounded by L and 1-Lipschitz in sup-H, so any instance built from the
# catalog satisfies the standing assumptions by construction.

def _capped_linear(basis: SpectralBasis, weights: np.ndarray, at_frac: float, L: float):
    w = weights / max(1.0, basis.norm(weights, H))

    def fn(t: float, x, v: float, noise) -> float:
        return _clamp(float(np.dot(x.value_at(at_frac * t) if t > 0 else x.value_at(0.0), w)), L)

    return fn


def _capped_norm(basis: SpectralBasis, at_frac: float, L: float):
    def fn(t: float, x, v: float, noise) -> float:
        return min(L, basis.norm(np.asarray(x.value_at(at_frac * t)), H))

    return fn


def _terminal(fn, horizon: float):
    def gfn(x, noise) -> float:
        return fn(horizon, x, 0.0, noise)

    return gfn


F_CATALOG = ("zero", "one", "linear", "capped-norm", "delay", "lookback", "vsq", "track")
G_CATALOG = ("zero", "linear", "capped-norm", "delay", "lookback")
BETA_CATALOG = ("zero", "modes", "feedback", "full-band")


def make_f(kind: str, basis: SpectralBasis, L: float, horizon: float):
    if kind == "zero":
        return lambda t, x, v, noise: 0.0
    if kind == "one":
        return lambda t, x, v, noise: 1.0
    if kind == "linear":
        return _capped_linear(basis, basis.unit(1), 1.0, L)
    if kind == "capped-norm":
        return _capped_norm(basis, 1.0, L)
    if kind == "delay":
        return _capped_norm(basis, 0.5, L)
    if kind == "lookback":
        return _capped_norm(basis, 0.3, L)
    if kind == "vsq":
        return lambda t, x, v, noise: _clamp(v * v, L)
    if kind == "track":
        return lambda t, x, v, noise: min(L, abs(v - math.tanh(float(noise.w_at(t)[0]))))
    raise ValueError(f"unknown f catalog entry {kind!r}; expected one of {F_CATALOG}")


def make_G(kind: str, basis: SpectralBasis, L: float, horizon: float):
    if kind == "zero":
        return lambda x, noise: 0.0
    if kind == "linear":
        return _terminal(_capped_linear(basis, basis.unit(1), 1.0, L), horizon)
    if kind == "capped-norm":
        return _terminal(_capped_norm(basis, 1.0, L), horizon)
    if kind == "delay":
        return _terminal(_capped_norm(basis, 0.5, L), horizon)
    if kind == "lookback":
        return _terminal(_capped_norm(basis, 0.3, L), horizon)
    raise ValueError(f"unknown G catalog entry {kind!r}; expected one of {G_CATALOG}")


def make_beta(kind: str, basis: SpectralBasis, L: float):
    if kind == "zero":
        return lambda t, x, v, noise: basis.zeros()
    if kind == "modes":
        w = basis.unit(1)
        return lambda t, x, v, noise: v * w
    if kind == "feedback":
        e1, e2 = basis.unit(1), basis.unit(2 if basis.dim >= 2 else 1)

        def beta(t, x, v, noise):
            fb = math.tanh(float(np.dot(np.asarray(x.value_at(0.5 * t)), e1)))
            return 0.5 * v * e1 + 0.5 * fb * e2

        return beta
    if kind == "full-band":
        w = 1.0 / np.arange(1, basis.dim + 1)
        w = 0.9 * w / basis.norm(w, H)
        return lambda t, x, v, noise: v * w
    raise ValueError(f"unknown beta catalog entry {kind!r}; expected one of {BETA_CATALOG}")


_BUILTIN_SPECS = {
    # name: (beta kind, f kind, G kind, L, is_random)
    "null": ("zero", "one", "zero", 1.0, False),
    "steer-1": ("modes", "linear", "linear", 1.0, False),
    "steer-1-terminal": ("modes", "zero", "linear", 1.0, False),
    "delay": ("modes", "delay", "delay", 1.0, False),
    "feedback": ("feedback", "capped-norm", "capped-norm", 1.0, False),
    "full-band": ("full-band", "capped-norm", "linear", 1.0, False),
    "vsq": ("modes", "vsq", "zero", 1.0, False),
    "random-track": ("modes", "track", "linear", 2.0, True),
}

BUILTIN_INSTANCES = tuple(_BUILTIN_SPECS) + ("example21",)


def make_instance(name: str, basis: SpectralBasis, horizon: float = 1.0,
                  control_set: ControlSet | None = None, m: int = 1,
                  f: str | None = None, G: str | None = None,
                  **example21_params) -> ProblemInstance:
    """Built-in problem instances; `f`/`G` override the catalog entry."""
    control_set = control_set or ControlSet()
    if name == "example21":
        return example21_instance(basis, horizon=horizon, control_set=control_set,
                                  **example21_params)
    if name not in _BUILTIN_SPECS:
        raise ValueError(f"unknown instance {name!r}; expected one of {BUILTIN_INSTANCES}")
    bk, fk, gk, L, rand = _BUILTIN_SPECS[name]
    fk = f or fk
    gk = G or gk
    rand = rand or fk == "track"
    coeffs = CoefficientSet(
        name=name,
        beta=make_beta(bk, basis, L),
        f=make_f(fk, basis, L, horizon),
        G=make_G(gk, basis, L, horizon),
        L=L,
        is_random=rand,
    )
    return ProblemInstance(basis, coeffs, control_set, horizon, m=m)


def ou_shift(noise: NoiseState, rate: float, vol: float, modes: int,
             dim: int, s: float) -> np.ndarray:
    """Ornstein-Uhlenbeck forcing in the first `modes` directions, driven by the
    discrete W-increments of the noise state:
    eta(t+dt) = e^{-rate dt} (eta(t) + vol dW(t)).  A deterministic functional
    of the observed increments, hence adapted and reproducible."""
    eta = np.zeros(dim)
    if vol == 0.0:
        return eta
    if isinstance(noise, WienerPath):
        times, values = noise.grid.nodes, noise.values
    elif isinstance(noise, TreeNodeHistory):
        times, values = noise.times, noise.values
    else:
        return eta
    prev = values[0]
    comp = np.zeros(min(modes, values.shape[1]))
    for i in range(1, len(times)):
        if times[i] > s + _T_EPS:
            break
        dt = times[i] - times[i - 1]
        dw = values[i] - prev
        comp = math.exp(-rate * dt) * (comp + vol * dw[: len(comp)])
        prev = values[i]
    eta[: len(comp)] = comp
    return eta


def example21_instance(basis: SpectralBasis, horizon: float = 1.0,
                       control_set: ControlSet | None = None,
                       eta_modes: int = 1, eta_rate: float = 1.0,
                       eta_vol: float = 0.5) -> ProblemInstance:
    """Shifted heat-equation control problem: the core coefficients are
    evaluated on x + eta for an OU forcing eta driven by W, which makes them
    random exactly when eta_vol > 0."""
    if eta_modes > basis.dim:
        raise ValueError("eta_modes exceeds ambient dimension")
    control_set = control_set or ControlSet()
    L = 1.0
    core_f = _capped_norm(basis, 1.0, L)
    core_beta = make_beta("modes", basis, L)

    def shift_fn(noise):
        return lambda s: ou_shift(noise, eta_rate, eta_vol, eta_modes, basis.dim, s)

    def beta(t, x, v, noise):
        return core_beta(t, _ShiftedPathView(x, shift_fn(noise)), v, noise)

    def f(t, x, v, noise):
        return core_f(t, _ShiftedPathView(x, shift_fn(noise)), v, noise)

    def G(x, noise):
        view = _ShiftedPathView(x, shift_fn(noise))
        return min(L, basis.norm(np.asarray(view.value_at(horizon)), H))

    coeffs = CoefficientSet("example21", beta, f, G, L, is_random=eta_vol > 0.0)
    return ProblemInstance(basis, coeffs, control_set, horizon, m=max(1, eta_modes))


def lipschitz_probe(inst: ProblemInstance, n_pairs: int, space: str,
                    rng: np.random.Generator, grid: TimeGrid | None = None) -> dict:
    """Measured Lipschitz moduli of (f, beta, G) over sampled path pairs and the
    worst observed magnitudes; all must respect the declared constant L."""
    from .paths import PathClassSpec, constant_path, sample_path_class

    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    basis = inst.basis
    grid = grid or TimeGrid(0.0, inst.horizon, 16)
    noise = ZeroNoise(inst.m) if not inst.is_random else sample_wiener(grid, inst.m, rng)
    seedling = constant_path(TimeGrid(grid.t0, grid.t0 + grid.dt, 1), basis.zeros())
    spec = PathClassSpec(basis, k=2.0, anchor=seedling, horizon=grid.t1)
    out = {"f": 0.0, "beta": 0.0, "G": 0.0, "max_f": 0.0, "max_beta": 0.0, "max_G": 0.0}
    for _ in range(n_pairs):
        x = sample_path_class(spec, rng)
        y = sample_path_class(spec, rng)
        gap = max(basis.norm(a - b, space) for a, b in zip(x.node_values(), y.node_values()))
        if gap < 1e-12:
            continue
        for t in (0.25 * grid.t1, 0.5 * grid.t1, grid.t1):
            i = grid.left_index(t)
            if i == 0:
                continue
            xr, yr = x.restrict(grid.nodes[i]), y.restrict(grid.nodes[i])
            for label in range(len(inst.control_set)):
                v = inst.control_set.param(label)
                fx, fy = eval_f(inst, t, xr, v, noise), eval_f(inst, t, yr, v, noise)
                bx, by = eval_beta(inst, t, xr, v, noise), eval_beta(inst, t, yr, v, noise)
                out["f"] = max(out["f"], abs(fx - fy) / gap)
                out["beta"] = max(out["beta"], basis.norm(bx - by, VSTAR) / gap)
                out["max_f"] = max(out["max_f"], abs(fx), abs(fy))
                out["max_beta"] = max(out["max_beta"], basis.norm(bx, H), basis.norm(by, H))
        gx, gy = eval_G(inst, x, noise), eval_G(inst, y, noise)
        out["G"] = max(out["G"], abs(gx - gy) / gap)
        out["max_G"] = max(out["max_G"], abs(gx), abs(gy))
    return out
