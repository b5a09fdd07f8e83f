"""Càdlàg paths on uniform time grids: sup-norms, the two-regime path metric,
horizontal extension, vertical perturbation, dyadic freezing, and generators /
membership tests for the compact drift-bounded path classes.

A path maps grid nodes to coefficient vectors and evaluates between nodes by
the left node's value (càdlàg step interpolation).  A vertical perturbation
may make the endpoint discontinuous; that endpoint lives in
``terminal_override`` and only applies at the exact final time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from io import StringIO
from typing import Optional

import numpy as np

from .spectral import H, VSTAR, SpectralBasis

_T_EPS = 1e-9


class GridMismatchError(ValueError):
    """Operation needs resampling onto a compatible grid first."""


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.t1 > self.t0:
            raise ValueError("need t1 > t0")

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    @cached_property
    def nodes(self) -> np.ndarray:
        ns = self.t0 + (self.t1 - self.t0) * np.arange(self.n_steps + 1) / self.n_steps
        ns.flags.writeable = False
        return ns

    def left_index(self, s: float) -> int:
        """Largest node index i with node_i <= s (up to a small snap tolerance)."""
        if s < self.t0 - _T_EPS or s > self.t1 + _T_EPS:
            raise ValueError(f"time {s} outside grid [{self.t0}, {self.t1}]")
        i = int(np.floor((s - self.t0) / self.dt + _T_EPS))
        return min(max(i, 0), self.n_steps)

    def index_of(self, s: float) -> int:
        """Index of a time expected to be a grid node."""
        i = self.left_index(s)
        if abs(self.nodes[i] - s) > _T_EPS:
            raise GridMismatchError(f"time {s} is not a node of the grid (dt={self.dt})")
        return i


@dataclass(frozen=True)
class Path:
    grid: TimeGrid
    values: np.ndarray                      # (n_steps + 1, dim)
    terminal_override: Optional[np.ndarray] = None
    drift: Optional[np.ndarray] = None       # generating g of a path-class sample, (n_steps, dim)

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=float)
        if vals.shape[0] != self.grid.n_steps + 1:
            raise ValueError("values must hold one vector per grid node")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        if self.terminal_override is not None:
            ov = np.ascontiguousarray(self.terminal_override, dtype=float)
            ov.flags.writeable = False
            object.__setattr__(self, "terminal_override", ov)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def end_time(self) -> float:
        return self.grid.t1

    def end_value(self) -> np.ndarray:
        if self.terminal_override is not None:
            return self.terminal_override
        return self.values[-1]

    def value_at(self, s: float) -> np.ndarray:
        """Càdlàg evaluation; the override only applies at the final time."""
        if s >= self.grid.t1 - _T_EPS:
            return self.end_value()
        return self.values[self.grid.left_index(s)]

    def node_values(self) -> np.ndarray:
        """All node values with the override substituted at the endpoint."""
        if self.terminal_override is None:
            return self.values
        out = self.values.copy()
        out[-1] = self.terminal_override
        return out

    def restrict(self, t: float) -> "Path":
        """Restriction to [t0, t]; t must be a grid node."""
        i = self.grid.index_of(t)
        if i == self.grid.n_steps:
            return self
        if i == 0:
            raise ValueError("cannot restrict a path to a single point")
        g = TimeGrid(self.grid.t0, float(self.grid.nodes[i]), i)
        return Path(g, self.values[: i + 1])


def constant_path(grid: TimeGrid, h: np.ndarray) -> Path:
    return Path(grid, np.tile(np.asarray(h, dtype=float), (grid.n_steps + 1, 1)))


def zero_path(grid: TimeGrid, dim: int) -> Path:
    return Path(grid, np.zeros((grid.n_steps + 1, dim)))


def resample(x: Path, grid: TimeGrid) -> Path:
    """Càdlàg re-evaluation of x on another grid covering the same window."""
    vals = np.stack([x.value_at(min(s, x.end_time)) for s in grid.nodes])
    return Path(grid, vals)


def sup_norm(basis: SpectralBasis, x: Path, space: str = H) -> float:
    vals = x.node_values()
    return max(basis.norm(v, space) for v in vals)


def path_dist(basis: SpectralBasis, x: Path, y: Path, space: str = H) -> float:
    """Two-regime metric between paths of possibly different lengths.

    For the shorter path x on [0,r] and y on [0,t]:
    sqrt(t-r) plus the sup over [0,t] of the pointwise distance, with x frozen
    at its endpoint value on [r,t].
    """
    if x.end_time > y.end_time:
        x, y = y, x
    r, t = x.end_time, y.end_time
    times = np.unique(np.concatenate([x.grid.nodes, y.grid.nodes[y.grid.nodes <= t + _T_EPS]]))
    x_end = x.end_value()
    worst = 0.0
    for s in times:
        ys = y.value_at(s)
        xs = x.value_at(s) if s < r - _T_EPS else x_end
        worst = max(worst, basis.norm(xs - ys, space))
    return float(np.sqrt(max(t - r, 0.0)) + worst)


def horizontal_extend(x: Path, delta: float) -> Path:
    """Prolong x past its endpoint by freezing the final value.

    When delta is a multiple of the grid spacing the original nodes are kept
    exactly; otherwise the frozen path is resampled onto a fresh uniform grid.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if delta == 0:
        return x
    dt = x.grid.dt
    k = delta / dt
    end = x.end_value()
    if abs(k - round(k)) < 1e-9:
        k = int(round(k))
        grid = TimeGrid(x.grid.t0, x.grid.t1 + k * dt, x.grid.n_steps + k)
        vals = np.vstack([x.node_values(), np.tile(end, (k, 1))])
        return Path(grid, vals)
    n = x.grid.n_steps + int(np.ceil(k))
    grid = TimeGrid(x.grid.t0, x.grid.t1 + delta, n)
    vals = np.stack([x.value_at(s) if s < x.end_time else end for s in grid.nodes])
    return Path(grid, vals)


def vertical_perturb(x: Path, h: np.ndarray) -> Path:
    """Shift only the endpoint value by h (possibly discontinuous there)."""
    h = np.asarray(h, dtype=float)
    if not np.any(h):
        return x
    return replace(x, terminal_override=x.end_value() + h, drift=None)


def stepwise_project(x: Path, level: int) -> Path:
    """Dyadic piecewise freezing: constant on each of the 2^level cells at the
    cell's left value, with the true value kept at the final time."""
    if level < 0:
        raise ValueError("level must be >= 0")
    cells = 2 ** level
    if x.grid.n_steps % cells != 0:
        n = cells * int(np.ceil(x.grid.n_steps / cells))
        x = resample(x, TimeGrid(x.grid.t0, x.grid.t1, n))
    per = x.grid.n_steps // cells
    vals = x.values.copy()
    for c in range(cells):
        vals[c * per: (c + 1) * per] = x.values[c * per]
    vals[-1] = x.values[-1]
    return Path(x.grid, vals, terminal_override=x.terminal_override)


@dataclass(frozen=True)
class PathClassSpec:
    """Paths x with x' = Ax + g, ||g(s)||_H <= k, agreeing with the anchor
    before the anchor's end time.

    The anchor is a Path, or a bare coefficient vector for the class anchored
    at a point at time zero (then ``n_steps`` fixes the sampling grid).
    """

    basis: SpectralBasis
    k: float
    anchor: Path | np.ndarray
    horizon: float
    active_modes: int = 8
    n_steps: Optional[int] = None

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("drift bound k must be >= 0")
        if isinstance(self.anchor, np.ndarray):
            if self.n_steps is None:
                raise ValueError("point anchors need n_steps for the grid")
        elif self.horizon < self.anchor.end_time - _T_EPS:
            raise ValueError("horizon must extend past the anchor")

    @property
    def anchor_time(self) -> float:
        if isinstance(self.anchor, np.ndarray):
            return 0.0
        return self.anchor.end_time

    def anchor_start_index(self, grid: TimeGrid) -> int:
        if isinstance(self.anchor, np.ndarray):
            return 0
        return grid.index_of(self.anchor.end_time)

    def anchor_values(self, grid: TimeGrid) -> np.ndarray:
        """Anchor samples on grid nodes up to and including the anchor time."""
        if isinstance(self.anchor, np.ndarray):
            return np.asarray(self.anchor, dtype=float)[None, :]
        i = self.anchor_start_index(grid)
        vals = np.stack([self.anchor.value_at(float(s)) for s in grid.nodes[: i + 1]])
        vals[i] = self.anchor.end_value()
        return vals

    def grid(self) -> TimeGrid:
        if isinstance(self.anchor, np.ndarray):
            return TimeGrid(0.0, self.horizon, self.n_steps)
        dt = self.anchor.grid.dt
        n = int(round((self.horizon - self.anchor.grid.t0) / dt))
        if abs(self.anchor.grid.t0 + n * dt - self.horizon) > _T_EPS:
            raise GridMismatchError("horizon is not a multiple of the anchor grid spacing")
        return TimeGrid(self.anchor.grid.t0, self.horizon, n)


def _phi1(z: np.ndarray) -> np.ndarray:
    """(e^z - 1)/z with the removable singularity filled in."""
    out = np.ones_like(z)
    nz = np.abs(z) > 1e-12
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


def exp_step_weights(basis: SpectralBasis, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode decay e^{mu dt} and drift pulse dt*phi1(mu dt) of one exact
    exponential step of x' = Ax + g with g frozen over the step."""
    z = basis.multipliers * dt
    return np.exp(z), dt * _phi1(z)


def sample_path_class(spec: PathClassSpec, rng: np.random.Generator) -> Path:
    """Draw a member by integrating x' = Ax + g for a piecewise-constant g with
    uniform direction in the first ``active_modes`` modes and uniform magnitude
    in [0, k].  The generating g is stored on the returned path."""
    basis = spec.basis
    grid = spec.grid()
    start = spec.anchor_start_index(grid)
    decay, pulse = exp_step_weights(basis, grid.dt)
    vals = np.zeros((grid.n_steps + 1, basis.dim))
    vals[: start + 1] = spec.anchor_values(grid)
    gs = np.zeros((grid.n_steps, basis.dim))
    act = min(spec.active_modes, basis.dim)
    for i in range(start, grid.n_steps):
        direction = rng.standard_normal(act)
        nrm = np.linalg.norm(direction)
        if nrm > 0:
            direction /= nrm
        g = np.zeros(basis.dim)
        g[:act] = rng.uniform(0.0, spec.k) * direction
        gs[i] = g
        vals[i + 1] = decay * vals[i] + pulse * g
    return Path(grid, vals, drift=gs)


def is_in_path_class(x: Path, spec: PathClassSpec, tol: float = 1e-8) -> bool:
    """Recover the drift from the step relation and accept iff it obeys the k
    bound and x agrees with the anchor before the anchor's end time."""
    basis = spec.basis
    grid = spec.grid()
    if x.grid.n_steps != grid.n_steps or abs(x.grid.dt - grid.dt) > _T_EPS:
        raise GridMismatchError("path grid does not match the class grid; resample first")
    start = spec.anchor_start_index(grid)
    anchor_vals = spec.anchor_values(grid)
    for i in range(start + 1):
        if basis.norm(x.values[i] - anchor_vals[i], H) > tol:
            return False
    decay, pulse = exp_step_weights(basis, grid.dt)
    for i in range(start, grid.n_steps):
        g = (x.values[i + 1] - decay * x.values[i]) / pulse
        if basis.norm(g, H) > spec.k + tol:
            return False
    return True


def freezing_gap(basis: SpectralBasis, x: Path, level: int, space: str = VSTAR) -> float:
    """sup-norm distance between a path and its dyadic freezing."""
    px = stepwise_project(x, level)
    return max(basis.norm(a - b, space) for a, b in zip(x.node_values(), px.node_values()))


def path_to_text(x: Path) -> str:
    """Columnar serialization: one row per node, time then the coefficients."""
    buf = StringIO()
    vals = x.node_values()
    for s, v in zip(x.grid.nodes, vals):
        buf.write(format(s, ".17g"))
        for a in v:
            buf.write(" " + format(a, ".17g"))
        buf.write("\n")
    return buf.getvalue()


def path_from_text(text: str) -> Path:
    rows = [[float(tok) for tok in line.split()] for line in text.strip().splitlines()]
    arr = np.asarray(rows)
    times, vals = arr[:, 0], arr[:, 1:]
    grid = TimeGrid(float(times[0]), float(times[-1]), len(times) - 1)
    return Path(grid, vals)
