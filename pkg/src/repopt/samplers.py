"""Direction and step-size distributions for the exploration step.

Samplers are immutable descriptors. The random generator is always owned by
the caller and passed in explicitly, so one descriptor can serve many runs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_DEGENERATE_NORM = 1e-12


def sample_sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform draw from the unit sphere in R^n (normalized Gaussian)."""
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    while True:
        g = rng.standard_normal(n)
        nrm = np.linalg.norm(g)
        if nrm >= _DEGENERATE_NORM:
            return g / nrm


def sample_gauss_axis(rng: np.random.Generator, n: int, mu: float) -> np.ndarray:
    """Axis-biased sphere draw.

    A coordinate ``i`` is picked uniformly, then ``g ~ N(0, I + (mu^2 - 1) e_i e_i^T)``
    is normalized. ``mu = 1`` gives the uniform sphere law.
    """
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    if not mu >= 1.0:
        raise ValueError(f"mu must be >= 1, got {mu}")
    while True:
        i = rng.integers(n)
        g = rng.standard_normal(n)
        g[i] *= mu
        nrm = np.linalg.norm(g)
        if nrm >= _DEGENERATE_NORM:
            return g / nrm


def sample_step(rng: np.random.Generator, r: float) -> float:
    if not (r > 0 and np.isfinite(r)):
        raise ValueError(f"step cap r must be positive and finite, got {r}")
    return float(rng.uniform(0.0, r))


@dataclass(frozen=True)
class DirectionSampler:
    kind: str = "sphere"
    mu: float = 1.0

    def __post_init__(self):
        if self.kind not in ("sphere", "gauss_axis"):
            raise ValueError(f"unknown direction sampler {self.kind!r}")
        if self.kind == "gauss_axis" and not self.mu >= 1.0:
            raise ValueError(f"gauss_axis needs mu >= 1, got {self.mu}")

    def __call__(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "sphere":
            return sample_sphere(rng, n)
        return sample_gauss_axis(rng, n, self.mu)

    def to_config(self) -> dict:
        if self.kind == "sphere":
            return {"sampler": "sphere"}
        return {"sampler": "gauss_axis", "mu": self.mu}

    @classmethod
    def from_config(cls, cfg: dict) -> "DirectionSampler":
        kind = cfg.get("sampler", "sphere")
        if kind == "gauss_axis":
            if "mu" not in cfg:
                raise ValueError("gauss_axis sampler requires 'mu'")
            return cls("gauss_axis", float(cfg["mu"]))
        return cls(kind)


@dataclass(frozen=True)
class StepSampler:
    r: float = 1.0

    def __post_init__(self):
        if not (self.r > 0 and np.isfinite(self.r)):
            raise ValueError(f"step cap r must be positive and finite, got {self.r}")

    def __call__(self, rng: np.random.Generator) -> float:
        return sample_step(rng, self.r)
