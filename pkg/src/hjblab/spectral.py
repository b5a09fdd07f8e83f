"""Concrete Gelfand triple V ⊂ H ⊂ V* in the Dirichlet-Laplace eigenbasis.

The ambient space is the span of the first ``dim`` eigenfunctions e_i of the
Laplacian on (0,1) with zero boundary values, so every element is a
coefficient vector ``a`` of length ``dim`` and

    ||a||_H^2  = sum a_i^2
    ||a||_V^2  = sum (1 + lam_i) a_i^2          lam_i = (i*pi)^2
    ||a||_V*^2 = sum a_i^2 / (1 + lam_i)

The generator A acts diagonally as multiplication by -lam_i.  With this
normalisation the embedding constant is exactly 1 and A satisfies the
coercivity identity 2<Av,v> = 2||v||_H^2 - 2||v||_V^2 (so c1 = c2 = 2) and
the bound ||Av||_V* <= ||v||_V (c3 = 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

H = "H"
V = "V"
VSTAR = "Vstar"
_SPACES = (H, V, VSTAR)


@dataclass(frozen=True)
class GelfandConstants:
    """Structure constants of the triple: coercivity, boundedness, embedding."""

    c1: float = 2.0
    c2: float = 2.0
    c3: float = 1.0
    c: float = 1.0

    @property
    def c1_plus(self) -> float:
        return max(0.0, self.c1)


@dataclass(frozen=True)
class SpectralBasis:
    dim: int
    constants: GelfandConstants = field(default_factory=GelfandConstants)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("basis dimension must be >= 1")

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        lam = (np.arange(1, self.dim + 1) * np.pi) ** 2
        lam.flags.writeable = False
        return lam

    @cached_property
    def multipliers(self) -> np.ndarray:
        mu = -self.eigenvalues
        mu.flags.writeable = False
        return mu

    def zeros(self) -> np.ndarray:
        return np.zeros(self.dim)

    def unit(self, i: int) -> np.ndarray:
        """Basis vector e_i, 1-indexed."""
        h = np.zeros(self.dim)
        h[i - 1] = 1.0
        return h

    def check_vector(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        if h.shape != (self.dim,):
            raise ValueError(f"expected coefficient vector of length {self.dim}, got {h.shape}")
        return h

    def norm(self, h: np.ndarray, space: str = H) -> float:
        h = self.check_vector(h)
        if space == H:
            return float(np.sqrt(np.sum(h * h)))
        if space == V:
            return float(np.sqrt(np.sum((1.0 + self.eigenvalues) * h * h)))
        if space == VSTAR:
            return float(np.sqrt(np.sum(h * h / (1.0 + self.eigenvalues))))
        raise ValueError(f"unknown space {space!r}; expected one of {_SPACES}")

    def pairing(self, hstar: np.ndarray, h: np.ndarray) -> float:
        """Duality bracket <hstar, h>; the H inner product when both lie in H."""
        return float(np.dot(self.check_vector(hstar), self.check_vector(h)))

    def apply_A(self, h: np.ndarray) -> np.ndarray:
        return self.multipliers * self.check_vector(h)

    def project(self, h: np.ndarray, d: int) -> np.ndarray:
        """Projection onto the first d modes (extended to V* by duality)."""
        if not 1 <= d:
            raise ValueError("projection dimension must be >= 1")
        if d > self.dim:
            raise ValueError(f"projection dimension {d} exceeds ambient dimension {self.dim}")
        out = self.check_vector(h).copy()
        out[d:] = 0.0
        return out

    def semigroup_step(self, h: np.ndarray, dt: float) -> np.ndarray:
        """Exact flow exp(dt*A) of dX/dt = AX; a contraction in all three norms."""
        if dt < 0:
            raise ValueError("dt must be nonnegative")
        return np.exp(self.multipliers * dt) * self.check_vector(h)

    def tail_mass(self, h: np.ndarray) -> float:
        """Coefficient mass beyond dim/2; reported so truncation bias stays visible."""
        h = self.check_vector(h)
        return float(np.sum(h[self.dim // 2:] ** 2))


def verify_gelfand(basis: SpectralBasis, n_samples: int, seed: int) -> dict:
    """Probe coercivity, boundedness and the embedding chain on random vectors.

    Returns the worst relative violation of each property; all should sit at
    floating-point zero because the inequalities are coordinate-wise algebra.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    cst = basis.constants
    worst = {"coercivity_identity": 0.0, "coercivity": 0.0, "boundedness": 0.0,
             "embedding_vstar_h": 0.0, "embedding_h_v": 0.0}
    for _ in range(n_samples):
        v = rng.standard_normal(basis.dim) * rng.uniform(0.1, 10.0)
        av = basis.apply_A(v)
        nh, nv, nvs = basis.norm(v, H), basis.norm(v, V), basis.norm(v, VSTAR)
        lhs = 2.0 * basis.pairing(av, v)
        rhs = cst.c1 * nh**2 - cst.c2 * nv**2
        scale = max(1.0, abs(lhs), abs(rhs))
        worst["coercivity_identity"] = max(worst["coercivity_identity"], abs(lhs - rhs) / scale)
        worst["coercivity"] = max(worst["coercivity"], (lhs - rhs) / scale)
        navs = basis.norm(av, VSTAR)
        worst["boundedness"] = max(worst["boundedness"], (navs - cst.c3 * nv) / max(1.0, nv))
        worst["embedding_vstar_h"] = max(worst["embedding_vstar_h"], (nvs - cst.c * nh) / max(1.0, nh))
        worst["embedding_h_v"] = max(worst["embedding_h_v"], (nh - cst.c * nv) / max(1.0, nv))
    worst["n_samples"] = n_samples
    worst["seed"] = seed
    return worst
