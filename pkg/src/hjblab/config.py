"""Run configuration: a flat key = value format with dotted sections, defaults
for every knob, and per-module validation with field-path error messages.

The full key reference ships with the package in ``config_schema.txt``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    instance_name: str = "steer-1"
    instance_f: str = ""
    instance_G: str = ""
    eta_modes: int = 1
    eta_rate: float = 1.0
    eta_vol: float = 0.5
    basis_dim: int = 64
    horizon: float = 1.0
    grid_steps: int = 32
    control_set: tuple[float, ...] = (-1.0, 0.0, 1.0)
    control_mesh: int = 2
    tree_depth: int = 2
    tree_m: int = 1
    tree_budget: int = 4096
    estimates_draws: int = 100
    estimates_controls: int = 5
    regularity_probes: int = 50
    calculus_functionals: tuple[str, ...] = ("linear-z1", "w1-z1", "quad-z1")
    calculus_mart_functional: str = "quad-w1"
    calculus_n_mc: int = 10000
    calculus_slope_mc: int = 200
    calculus_dt_exps: tuple[int, ...] = (5, 6, 7, 8, 9)
    approx_instance: str = "full-band"
    approx_f: str = "delay"
    approx_G: str = "lookback"
    approx_partition: int = 4
    approx_dyadic_levels: tuple[int, ...] = (1, 2, 3, 4)
    approx_proj_dims: tuple[int, ...] = (1, 2, 4, 8)
    approx_class_bounds: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    approx_ensemble: int = 256
    approx_x0: tuple[tuple[int, float], ...] = ((1, 0.4), (3, 0.2))
    sandwich_depth: int = 3
    sandwich_proj_dim: int = 1
    sandwich_deltas: tuple[float, ...] = (0.2, 0.1, 0.05)
    sandwich_probes: int = 20
    mc_samples: int = 1000
    seed: int = 42
    workers: int = 1

    def x0_vector(self, dim: int) -> np.ndarray:
        x0 = np.zeros(dim)
        for mode, weight in self.approx_x0:
            if not 1 <= mode <= dim:
                raise ConfigError(f"approx.x0 mode {mode} outside 1..{dim}")
            x0[mode - 1] = weight
        return x0


_KEYMAP = {
    "instance.name": ("instance_name", str),
    "instance.f": ("instance_f", str),
    "instance.G": ("instance_G", str),
    "instance.eta_modes": ("eta_modes", int),
    "instance.eta_rate": ("eta_rate", float),
    "instance.eta_vol": ("eta_vol", float),
    "basis.dim": ("basis_dim", int),
    "grid.horizon": ("horizon", float),
    "grid.steps": ("grid_steps", int),
    "control.set": ("control_set", "floats"),
    "control.mesh": ("control_mesh", int),
    "tree.depth": ("tree_depth", int),
    "tree.m": ("tree_m", int),
    "tree.budget": ("tree_budget", int),
    "estimates.draws": ("estimates_draws", int),
    "estimates.controls": ("estimates_controls", int),
    "regularity.probes": ("regularity_probes", int),
    "calculus.functionals": ("calculus_functionals", "strs"),
    "calculus.mart_functional": ("calculus_mart_functional", str),
    "calculus.n_mc": ("calculus_n_mc", int),
    "calculus.slope_mc": ("calculus_slope_mc", int),
    "calculus.dt_exps": ("calculus_dt_exps", "ints"),
    "approx.instance": ("approx_instance", str),
    "approx.f": ("approx_f", str),
    "approx.G": ("approx_G", str),
    "approx.partition": ("approx_partition", int),
    "approx.dyadic_levels": ("approx_dyadic_levels", "ints"),
    "approx.proj_dims": ("approx_proj_dims", "ints"),
    "approx.class_bounds": ("approx_class_bounds", "floats"),
    "approx.ensemble": ("approx_ensemble", int),
    "approx.x0": ("approx_x0", "modes"),
    "sandwich.depth": ("sandwich_depth", int),
    "sandwich.proj_dim": ("sandwich_proj_dim", int),
    "sandwich.deltas": ("sandwich_deltas", "floats"),
    "sandwich.probes": ("sandwich_probes", int),
    "mc.samples": ("mc_samples", int),
    "seed": ("seed", int),
    "workers": ("workers", int),
}


def _convert(key: str, raw: str, kind):
    try:
        if kind is str:
            return raw
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "floats":
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
        if kind == "ints":
            return tuple(int(tok) for tok in raw.split(",") if tok.strip())
        if kind == "strs":
            return tuple(tok.strip() for tok in raw.split(",") if tok.strip())
        if kind == "modes":
            out = []
            for tok in raw.split(","):
                if not tok.strip():
                    continue
                mode, weight = tok.split(":")
                out.append((int(mode), float(weight)))
            return tuple(out)
    except Exception as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from exc
    raise ConfigError(f"{key}: unknown kind")


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _KEYMAP:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        attr, kind = _KEYMAP[key]
        setattr(cfg, attr, _convert(key, raw, kind))
    return cfg


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    cfg = dataclasses.replace(cfg)
    for key, raw in overrides.items():
        if key not in _KEYMAP:
            raise ConfigError(f"unknown config key {key!r}")
        attr, kind = _KEYMAP[key]
        setattr(cfg, attr, _convert(key, str(raw), kind))
    return cfg


def config_echo(cfg: RunConfig) -> dict:
    """Flat dotted-key echo of the full configuration for manifests."""
    out = {}
    for key, (attr, kind) in _KEYMAP.items():
        val = getattr(cfg, attr)
        if kind == "modes":
            out[key] = ",".join(f"{m}:{w}" for m, w in val)
        elif isinstance(val, tuple):
            out[key] = ",".join(str(v) for v in val)
        else:
            out[key] = str(val)
    return out


def validate_config(cfg: RunConfig) -> list[str]:
    """Per-module validation; returns a list of 'field.path: problem' strings."""
    errors = []
    if cfg.basis_dim < 1:
        errors.append("basis.dim: must be >= 1")
    if cfg.horizon <= 0:
        errors.append("grid.horizon: must be positive")
    if cfg.grid_steps < 2:
        errors.append("grid.steps: must be >= 2")
    if not cfg.control_set:
        errors.append("control.set: must be nonempty")
    if cfg.control_mesh < 1:
        errors.append("control.mesh: must be >= 1")
    if cfg.tree_depth < 1:
        errors.append("tree.depth: must be >= 1")
    if cfg.tree_m < 1:
        errors.append("tree.m: must be >= 1")
    if (2 ** cfg.tree_m) ** cfg.tree_depth > cfg.tree_budget:
        errors.append("tree.depth: scenario tree exceeds tree.budget")
    if cfg.approx_partition <= 3:
        errors.append("approx.partition: must exceed 3")
    for d in cfg.approx_proj_dims:
        if not 1 <= d <= cfg.basis_dim:
            errors.append(f"approx.proj_dims: {d} outside 1..basis.dim")
    if sorted(cfg.approx_proj_dims) != list(cfg.approx_proj_dims):
        errors.append("approx.proj_dims: must be increasing")
    for m in cfg.approx_dyadic_levels:
        if m < 0:
            errors.append("approx.dyadic_levels: must be nonnegative")
    if cfg.approx_ensemble < 1:
        errors.append("approx.ensemble: must be >= 1")
    for mode, _ in cfg.approx_x0:
        if not 1 <= mode <= cfg.basis_dim:
            errors.append(f"approx.x0: mode {mode} outside 1..basis.dim")
    if not 1 <= cfg.sandwich_proj_dim <= 2:
        errors.append("sandwich.proj_dim: exact product trees need d <= 2")
    if cfg.sandwich_depth < 1 or cfg.sandwich_depth > 4:
        errors.append("sandwich.depth: exact product trees need depth in 1..4")
    for delta in cfg.sandwich_deltas:
        if not 0 <= delta < 1:
            errors.append(f"sandwich.deltas: {delta} outside [0, 1)")
    if cfg.mc_samples < 2:
        errors.append("mc.samples: must be >= 2")
    if cfg.workers < 1:
        errors.append("workers: must be >= 1")
    if cfg.eta_modes > cfg.basis_dim:
        errors.append("instance.eta_modes: exceeds basis.dim")
    return errors


def schema_text() -> str:
    return resources.files("hjblab").joinpath("config_schema.txt").read_text()
