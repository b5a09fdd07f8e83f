"""Cylindrical test functionals with exact vertical gradients and
drift/martingale decomposition, the generator along the controlled state, and
the numerical residual of the change-of-variables identity along state flows.

A functional is u(t, x_t) = g(t; w_1..w_q; z_1..z_p) where w_j = W_c(t_j ∧ t)
freezes a noise component at an anchor time and z_j = <x(s_j ∧ t), p_j> pairs
the path against a fixed direction p_j with finite V-norm.  g comes from a
closed catalog with symbolic first and second derivatives, which makes the
vertical gradient, the drift part and the martingale part all available in
closed form:

    grad u = sum over active z-anchors of dg/dz_j * p_j
    drift  = d_t g + 1/2 * sum over active w-pairs (same component) of d2g
    mart_c = sum over active w-anchors of component c of dg/dw_j

Anchors count as active for the gradient while s_j >= t and for the noise
parts while t_j > t (càdlàg freezing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
import sympy as sp

from .dynamics import SolverConfig, full_grid, history_path, solve_state, step_weights
from .paths import Path, TimeGrid, horizontal_extend
from .problem import NoiseState, ProblemInstance, ZeroNoise, eval_beta, eval_f
from .seeding import rng_for
from .spectral import V, VSTAR, SpectralBasis
from .value import hamiltonian

_EPS = 1e-9


def _as_array(val, like: np.ndarray) -> np.ndarray:
    out = np.asarray(val, dtype=float)
    if out.shape != like.shape:
        out = np.broadcast_to(out, like.shape).copy()
    return out


@dataclass(frozen=True)
class CylindricalFunctional:
    name: str
    g: sp.Expr
    t_sym: sp.Symbol
    w_syms: tuple[sp.Symbol, ...]
    z_syms: tuple[sp.Symbol, ...]
    w_anchors: tuple[tuple[float, int], ...]      # (anchor time, noise component)
    z_anchors: tuple[tuple[float, np.ndarray], ...]  # (anchor time, direction in V)
    rho: float                                    # declared bound on ||grad u||_V
    alpha: float = 0.5
    partition: tuple[float, ...] = (0.0, 1.0)
    dt_bound: float = 10.0                        # declared |drift part| bound on probes
    holder_const: float = 50.0                    # declared modulus for the alpha-Hölder checks

    @cached_property
    def _args(self):
        return (self.t_sym,) + self.w_syms + self.z_syms

    @cached_property
    def _val(self) -> Callable:
        return sp.lambdify(self._args, self.g, "numpy")

    @cached_property
    def _ddt(self) -> Callable:
        return sp.lambdify(self._args, sp.diff(self.g, self.t_sym), "numpy")

    @cached_property
    def _dw(self) -> tuple[Callable, ...]:
        return tuple(sp.lambdify(self._args, sp.diff(self.g, w), "numpy")
                     for w in self.w_syms)

    @cached_property
    def _dz(self) -> tuple[Callable, ...]:
        return tuple(sp.lambdify(self._args, sp.diff(self.g, z), "numpy")
                     for z in self.z_syms)

    @cached_property
    def _d2w(self) -> dict[tuple[int, int], Callable]:
        out = {}
        for j, wj in enumerate(self.w_syms):
            for k, wk in enumerate(self.w_syms):
                out[(j, k)] = sp.lambdify(self._args, sp.diff(self.g, wj, wk), "numpy")
        return out

    # -- argument plumbing ---------------------------------------------------

    def z_values(self, basis: SpectralBasis, t: float, x_t) -> list[float]:
        return [float(np.dot(np.asarray(x_t.value_at(min(s, t))), p))
                for s, p in self.z_anchors]

    def w_values(self, t: float, w_lookup: Callable[[float], np.ndarray]) -> list:
        """w_lookup(a) returns W(a), scalar per component or arrays over paths."""
        return [np.asarray(w_lookup(min(a, t)))[..., c] for a, c in self.w_anchors]

    def value(self, basis: SpectralBasis, t: float, x_t,
              noise: Optional[NoiseState] = None, w_vals: Optional[list] = None):
        if w_vals is None:
            noise = noise or ZeroNoise()
            w_vals = self.w_values(t, noise.w_at)
        return self._val(t, *w_vals, *self.z_values(basis, t, x_t))

    def vertical_gradient(self, basis: SpectralBasis, t: float, x_t,
                          noise: Optional[NoiseState] = None,
                          w_vals: Optional[list] = None) -> np.ndarray:
        """Gateaux derivative against endpoint perturbations, valued in V."""
        if w_vals is None:
            noise = noise or ZeroNoise()
            w_vals = self.w_values(t, noise.w_at)
        zs = self.z_values(basis, t, x_t)
        grad = np.zeros(basis.dim)
        for j, (s, p) in enumerate(self.z_anchors):
            if s >= t - _EPS:
                grad += float(self._dz[j](t, *w_vals, *zs)) * p
        return grad

    def gradient_weights(self, t: float, w_vals: list, zs: list) -> list:
        """dg/dz_j for active z-anchors, vectorised over path batches; inactive
        anchors contribute 0."""
        out = []
        ref = None
        for w in w_vals:
            if isinstance(w, np.ndarray) and w.ndim > 0:
                ref = w
        for j, (s, _) in enumerate(self.z_anchors):
            if s >= t - _EPS:
                val = self._dz[j](t, *w_vals, *zs)
            else:
                val = 0.0
            out.append(_as_array(val, ref) if ref is not None else float(val))
        return out

    def semimartingale_parts(self, basis: SpectralBasis, t: float, x_t, m: int,
                             noise: Optional[NoiseState] = None,
                             w_vals: Optional[list] = None):
        """(drift part, martingale part in R^m) of u along horizontal extension."""
        if w_vals is None:
            noise = noise or ZeroNoise(m)
            w_vals = self.w_values(t, noise.w_at)
        zs = self.z_values(basis, t, x_t)
        active = [j for j, (a, _) in enumerate(self.w_anchors) if a > t + _EPS]
        drift = self._ddt(t, *w_vals, *zs)
        for j in active:
            for k in active:
                if self.w_anchors[j][1] == self.w_anchors[k][1]:
                    drift = drift + 0.5 * self._d2w[(j, k)](t, *w_vals, *zs)
        ref = None
        for w in w_vals:
            if isinstance(w, np.ndarray) and w.ndim > 0:
                ref = w
        if ref is None:
            mart = np.zeros(m)
            for j in active:
                mart[self.w_anchors[j][1]] += float(self._dw[j](t, *w_vals, *zs))
            return float(drift), mart
        mart = np.zeros((m,) + ref.shape)
        for j in active:
            mart[self.w_anchors[j][1]] += _as_array(self._dw[j](t, *w_vals, *zs), ref)
        return _as_array(drift, ref), mart


def gateaux_quotient(u: CylindricalFunctional, basis: SpectralBasis, t: float,
                     x_t: Path, h: np.ndarray, lam: float = 1e-6,
                     noise: Optional[NoiseState] = None) -> float:
    """(u(x_t with endpoint + lam h) - u(x_t)) / lam, the oracle for the
    symbolic vertical gradient."""
    from .paths import vertical_perturb

    up = u.value(basis, t, vertical_perturb(x_t, lam * np.asarray(h)), noise=noise)
    base = u.value(basis, t, x_t, noise=noise)
    return (float(up) - float(base)) / lam


def generator(u: CylindricalFunctional, inst: ProblemInstance, t: float, x_t,
              v: float, noise: Optional[NoiseState] = None) -> float:
    """Drift part plus <Ax(t), grad u> plus <beta(t,x,v), grad u>."""
    noise = noise or ZeroNoise(inst.m)
    basis = inst.basis
    drift, _ = u.semimartingale_parts(basis, t, x_t, inst.m, noise=noise)
    grad = u.vertical_gradient(basis, t, x_t, noise=noise)
    xe = np.asarray(x_t.end_value())
    return float(drift) + basis.pairing(basis.apply_A(xe), grad) \
        + basis.pairing(eval_beta(inst, t, x_t, v, noise), grad)


def generator_hamiltonian_gap(u: CylindricalFunctional, inst: ProblemInstance,
                              t: float, x_t, noise: Optional[NoiseState] = None) -> float:
    """| min over v of (generator + f) - drift part - Hamiltonian(grad u) |,
    an algebraic identity for every cylindrical functional."""
    noise = noise or ZeroNoise(inst.m)
    vals = [generator(u, inst, t, x_t, inst.control_set.param(lbl), noise)
            + eval_f(inst, t, x_t, inst.control_set.param(lbl), noise)
            for lbl in range(len(inst.control_set))]
    drift, _ = u.semimartingale_parts(inst.basis, t, x_t, inst.m, noise=noise)
    grad = u.vertical_gradient(inst.basis, t, x_t, noise=noise)
    ham, _ = hamiltonian(inst, t, x_t, grad, noise)
    return abs(min(vals) - float(drift) - ham)


@dataclass(frozen=True)
class ResidualStats:
    dt: float
    n_mc: int
    mean: float
    stderr: float
    mean_abs: float
    mart_mean: float
    mart_stderr: float


def ito_kunita_residual(u: CylindricalFunctional, inst: ProblemInstance,
                        control, rho_time: float, tau_time: float,
                        x_rho, n_mc: int, seed: int, dt: float) -> ResidualStats:
    """Monte Carlo residual of

        u(tau, X_tau) - u(rho, x_rho)
            = sum generator(u) dt + sum mart-part . dW

    along the controlled state, with left-point sums on a dt grid.  The
    interval [rho, tau] must sit inside one partition cell of u.  Only
    deterministic instances are driven here (the state is then one solve and
    the noise enters through the functional alone, which vectorises over
    paths).
    """
    if inst.is_random:
        raise ValueError("residual driver expects deterministic coefficients")
    for a, b in zip(u.partition, u.partition[1:]):
        if a - _EPS <= rho_time and tau_time <= b + _EPS:
            break
    else:
        raise ValueError("[rho, tau] must lie inside one partition cell of u")
    basis = inst.basis
    config = SolverConfig(dt=dt)
    grid = full_grid(inst, dt)
    i0 = grid.index_of(rho_time) if rho_time > 0 else 0
    i1 = grid.index_of(tau_time)
    noise0 = ZeroNoise(inst.m)
    sol = solve_state(inst, x_rho, control, noise0, config)
    vals = sol.path.values

    rng = rng_for(seed, "ito-kunita")
    dw = rng.normal(0.0, math.sqrt(dt), size=(n_mc, grid.n_steps, inst.m))
    wcum = np.concatenate([np.zeros((n_mc, 1, inst.m)), np.cumsum(dw, axis=1)], axis=1)

    def w_lookup_at(i: int):
        return lambda a: wcum[:, grid.left_index(min(a, grid.t1)), :]

    lhs_w = u.w_values(tau_time, w_lookup_at(i1))
    x_tau = history_path(grid, vals, i1) if i1 > 0 else history_path(grid, vals, 0)
    z_tau = u.z_values(basis, tau_time, x_tau)
    lhs = _as_array(u._val(tau_time, *lhs_w, *z_tau), np.empty(n_mc))
    rho_w = u.w_values(rho_time, w_lookup_at(i0))
    x0_path = history_path(grid, vals, i0)
    z_rho = u.z_values(basis, rho_time, x0_path)
    lhs = lhs - _as_array(u._val(rho_time, *rho_w, *z_rho), np.empty(n_mc))

    gen_sum = np.zeros(n_mc)
    mart_sum = np.zeros(n_mc)
    for i in range(i0, i1):
        s = float(grid.nodes[i])
        hp = history_path(grid, vals, i)
        w_vals = u.w_values(s, w_lookup_at(i))
        zs = u.z_values(basis, s, hp)
        drift, mart = u.semimartingale_parts(basis, s, hp, inst.m, w_vals=w_vals)
        vparam = control(s, noise0)
        b = eval_beta(inst, s, hp, vparam, noise0)
        # pairing terms assembled per z-anchor so the batch dimension broadcasts
        gw = u.gradient_weights(s, w_vals, zs)
        ax = basis.apply_A(vals[i])
        gen = _as_array(drift, gen_sum)
        for j, (_, p) in enumerate(u.z_anchors):
            gen = gen + np.asarray(gw[j]) * (basis.pairing(ax, p) + basis.pairing(b, p))
        gen_sum += gen * dt
        step_mart = np.zeros(n_mc)
        for c in range(inst.m):
            step_mart += _as_array(mart[c], step_mart) * dw[:, i, c]
        mart_sum += step_mart

    res = lhs - gen_sum - mart_sum
    stderr = float(res.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else 0.0
    mart_stderr = float(mart_sum.std(ddof=1) / math.sqrt(n_mc)) if n_mc > 1 else 0.0
    return ResidualStats(dt, n_mc, float(res.mean()), stderr,
                         float(np.abs(res).mean()),
                         float(mart_sum.mean()), mart_stderr)


def decomposition_residual(u: CylindricalFunctional, basis: SpectralBasis,
                           x_r: Path, tau_time: float, n_mc: int, seed: int,
                           dt: float, m: int = 1) -> dict:
    """Mean-square residual of the defining decomposition of u along the
    horizontal extension of x_r, which must shrink linearly in dt."""
    r = x_r.end_time
    n = int(round((tau_time - r) / dt))
    if abs(r + n * dt - tau_time) > _EPS:
        raise ValueError("dt must tile [r, tau]")
    ext = horizontal_extend(x_r, tau_time - r)
    rng = rng_for(seed, "decomposition")
    dw = rng.normal(0.0, math.sqrt(dt), size=(n_mc, n, m))
    wcum = np.concatenate([np.zeros((n_mc, 1, m)), np.cumsum(dw, axis=1)], axis=1)

    def lookup(i):
        def at(a):
            idx = int(round((min(a, tau_time) - r) / dt))
            return wcum[:, min(max(idx, 0), n), :]
        return at

    # the pre-r noise history is empty: W starts at r for this check
    z_end = u.z_values(basis, tau_time, ext)
    lhs = _as_array(u._val(tau_time, *u.w_values(tau_time, lookup(n)), *z_end),
                    np.empty(n_mc))
    z_r = u.z_values(basis, r, x_r)
    lhs = lhs - _as_array(u._val(r, *u.w_values(r, lookup(0)), *z_r), np.empty(n_mc))
    acc = np.zeros(n_mc)
    for i in range(n):
        s = r + i * dt
        w_vals = u.w_values(s, lookup(i))
        drift, mart = u.semimartingale_parts(basis, s, ext, m, w_vals=w_vals)
        acc += _as_array(drift, acc) * dt
        for c in range(m):
            acc += _as_array(mart[c], acc) * dw[:, i, c]
    res = lhs - acc
    return {"mean_sq": float((res ** 2).mean()), "dt": dt, "n_mc": n_mc}


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------

CATALOG = ("linear-z1", "quad-z1", "w1-z1", "quad-w1", "sin-z1", "w1w2-rep",
           "quad-w1-rep", "cubic-z1", "t-z1")


def make_functional(name: str, basis: SpectralBasis, horizon: float = 1.0,
                    anchor_time: Optional[float] = None) -> CylindricalFunctional:
    """Catalog functionals; `anchor_time` defaults to the horizon (so the
    state/noise arguments stay live on the whole window)."""
    T = horizon
    at = T if anchor_time is None else anchor_time
    t = sp.Symbol("t")
    w1, w2 = sp.symbols("w1 w2")
    z1, z2 = sp.symbols("z1 z2")
    e1 = basis.unit(1)
    e2 = basis.unit(min(2, basis.dim))
    v_e1 = basis.norm(e1, V)

    def make(g, w_syms, z_syms, w_anchors, z_anchors, rho, dt_bound, holder_const):
        return CylindricalFunctional(
            name=name, g=g, t_sym=t, w_syms=w_syms, z_syms=z_syms,
            w_anchors=w_anchors, z_anchors=z_anchors, rho=rho,
            partition=(0.0, T), dt_bound=dt_bound, holder_const=holder_const)

    if name == "linear-z1":
        return make(z1, (), (z1,), (), ((at, e1),), rho=1.01 * v_e1,
                    dt_bound=0.01, holder_const=4.0 * v_e1)
    if name == "quad-z1":
        return make(z1 ** 2, (), (z1,), (), ((at, e1),), rho=8.01 * v_e1,
                    dt_bound=0.01, holder_const=40.0 * v_e1)
    if name == "cubic-z1":
        return make(z1 ** 3 + z1, (), (z1,), (), ((at, e1),),
                    rho=(3 * 16 + 1.01) * v_e1, dt_bound=0.01,
                    holder_const=200.0 * v_e1)
    if name == "w1-z1":
        return make(w1 * z1, (w1,), (z1,), ((at, 0),), ((at, e1),),
                    rho=12.0 * v_e1, dt_bound=0.01, holder_const=60.0 * v_e1)
    if name == "quad-w1":
        return make(w1 ** 2, (w1,), (), ((at, 0),), (), rho=0.01,
                    dt_bound=1.01, holder_const=1.0)
    if name == "sin-z1":
        return make(sp.sin(z1) + t * z2, (), (z1, z2), (),
                    ((at, e1), (at, e2)), rho=(1.0 + T) * 1.01 * v_e1,
                    dt_bound=4.1, holder_const=20.0 * v_e1)
    if name == "w1w2-rep":
        return make((w1 + w2) ** 2, (w1, w2), (), ((at, 0), (at, 0)), (),
                    rho=0.01, dt_bound=4.01, holder_const=1.0)
    if name == "quad-w1-rep":
        return make(4 * w1 ** 2, (w1,), (), ((at, 0),), (), rho=0.01,
                    dt_bound=4.01, holder_const=1.0)
    if name == "t-z1":
        return make(t * z1 + z1, (), (z1,), (), ((at, e1),),
                    rho=(1 + T) * 1.01 * v_e1, dt_bound=4.1,
                    holder_const=10.0 * v_e1)
    raise ValueError(f"unknown functional {name!r}; expected one of {CATALOG}")
