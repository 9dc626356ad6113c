"""Analytic potential families shared by the CLI and the test suite."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .graph import PotentialGrid, grid_from_callable, zero_grid


def quadratic_potential(n: int, N: int, M) -> PotentialGrid:
    """u(x) = x^T M x / 2 sampled on the grid."""
    M = np.asarray(M, dtype=float)
    return grid_from_callable(
        n, N, lambda p: 0.5 * np.einsum("mi,ij,mj->m", p, M, p),
        description="quadratic")


def iso_quadratic_potential(n: int, N: int, c: float) -> PotentialGrid:
    return quadratic_potential(n, N, c * np.eye(n))


def sine_potential(n: int, N: int, amplitude: float = 0.2,
                   freq: float = 1.0) -> PotentialGrid:
    """amplitude * sin(f x_1) * cos(f x_2) * ... with unit trailing factors."""

    def fn(p):
        out = amplitude * np.sin(freq * p[:, 0])
        if n >= 2:
            out = out * np.cos(freq * p[:, 1])
        for a in range(2, n):
            out = out * np.cos(0.5 * freq * p[:, a])
        return out

    return grid_from_callable(n, N, fn, description="sine")


def random_smooth_potential(n: int, N: int, amplitude: float,
                            seed: int, terms: int = 3) -> PotentialGrid:
    """Low-frequency trigonometric sum with |D^2 u| controlled by amplitude.

    Frequencies are bounded by 2, so the Hessian is bounded by ~4*amplitude.
    Deterministic in the seed.
    """
    rng = np.random.default_rng(seed)
    coeff = rng.uniform(-1.0, 1.0, size=terms)
    coeff /= np.abs(coeff).sum()
    freqs = rng.uniform(0.5, 2.0, size=(terms, n))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=terms)

    def fn(p):
        out = np.zeros(p.shape[0])
        for t in range(terms):
            out += coeff[t] * np.sin(p @ freqs[t] + phases[t])
        return amplitude * out

    return grid_from_callable(n, N, fn, description=f"random_smooth(seed={seed})")


def potential_from_config(cfg, n: int, N: int) -> PotentialGrid:
    """Build a potential from a CLI descriptor (string shorthand or table)."""
    if isinstance(cfg, str):
        cfg = {"kind": cfg}
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError(f"bad potential descriptor {cfg!r}")
    kind = cfg["kind"]
    if kind == "zero":
        return zero_grid(n, N)
    if kind == "iso_quadratic":
        return iso_quadratic_potential(n, N, float(cfg.get("c", 0.2)))
    if kind == "quadratic":
        return quadratic_potential(n, N, np.asarray(cfg["matrix"], dtype=float))
    if kind == "sine":
        return sine_potential(n, N, float(cfg.get("amplitude", 0.2)),
                              float(cfg.get("freq", 1.0)))
    if kind == "random_smooth":
        return random_smooth_potential(n, N, float(cfg.get("amplitude", 0.1)),
                                       int(cfg.get("seed", 0)))
    raise ConfigError(f"unknown potential kind {kind!r}")
