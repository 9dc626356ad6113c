"""Background Riemannian metrics on the 2n-ball, stored in block form.

A metric is represented by the deviation of its 2n x 2n matrix from the
identity, split into the blocks (A, B, C) so that the full matrix at a
point (x, y) is

    h(x, y) = [[I + A, C], [C^T, I + B]].

Blocks are supplied as batched callables so they can be evaluated at
arbitrary points (x, Du(x)) without interpolation error; y-derivatives of
the blocks are supplied analytically by the presets and verified against
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, ParameterError, ValidityError

# (x, y) with shapes (m, n) -> three (m, n, n) blocks
BlockFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]
# (x, y) with shapes (m, n) -> three (m, n, n, n) arrays, last axis = y-direction
BlockDyFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]

_SYM_TOL = 1e-9


@dataclass(frozen=True)
class MetricField:
    """Callable background metric with analytic y-derivatives.

    Immutable after construction; all evaluation paths are pure.
    """

    n: int
    eval_blocks: BlockFn
    eval_dy_blocks: BlockDyFn
    c0_norm_bound: float | None = None
    domain_radius: float = 2.0
    is_flat: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f"dimension must be >= 1, got {self.n}")


@dataclass(frozen=True)
class MetricPreset:
    """Descriptor for the built-in metric families (CLI configuration unit)."""

    kind: str  # "flat" | "conformal" | "random_trig"
    epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("flat", "conformal", "random_trig"):
            raise ParameterError(f"unknown metric preset kind {self.kind!r}")
        if self.epsilon < 0:
            raise ParameterError("perturbation amplitude must be >= 0")

    def build(self, n: int) -> MetricField:
        if self.kind == "flat":
            return flat_metric(n)
        if self.kind == "conformal":
            return conformal_metric(n, self.epsilon)
        return random_trig_metric(n, self.epsilon, self.seed)


def _as_batch(p, n: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape == (n,):
        return p[None, :]
    if p.ndim == 2 and p.shape[1] == n:
        return p
    raise ParameterError(f"expected point(s) of dimension {n}, got shape {p.shape}")


def _check_domain(m: MetricField, x: np.ndarray, y: np.ndarray):
    r2 = (x * x).sum(axis=1) + (y * y).sum(axis=1)
    if np.any(r2 > m.domain_radius**2 * (1 + 1e-12) + 1e-12):
        worst = float(np.sqrt(r2.max()))
        raise DomainError(
            f"point at radius {worst:.6g} outside metric domain "
            f"(radius {m.domain_radius:.6g})"
        )


def full_matrix(A: np.ndarray, B: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Assemble the full 2n x 2n metric h = I + [[A, C], [C^T, B]] (batched)."""
    n = A.shape[-1]
    m = A.shape[:-2]
    h = np.zeros(m + (2 * n, 2 * n))
    h[..., :n, :n] = A
    h[..., :n, n:] = C
    h[..., n:, :n] = np.swapaxes(C, -1, -2)
    h[..., n:, n:] = B
    h[..., np.arange(2 * n), np.arange(2 * n)] += 1.0
    return h


def blocks_at(m: MetricField, x, y, check: bool = True):
    """Evaluate the blocks at batched points with domain/validity checks.

    Returns (A, B, C) with shapes (k, n, n); A and B are symmetrized.
    """
    X = _as_batch(x, m.n)
    Y = _as_batch(y, m.n)
    if check:
        _check_domain(m, X, Y)
    A, B, C = m.eval_blocks(X, Y)
    for name, blk in (("A", A), ("B", B)):
        skew = np.abs(blk - np.swapaxes(blk, -1, -2)).max()
        if skew > _SYM_TOL * (1.0 + np.abs(blk).max()):
            raise ValidityError(f"block {name} is not symmetric (deviation {skew:.3g})")
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    B = 0.5 * (B + np.swapaxes(B, -1, -2))
    if check and not m.is_flat:
        h = full_matrix(A, B, C)
        try:
            np.linalg.cholesky(h)
        except np.linalg.LinAlgError:
            raise ValidityError("full metric is not positive definite at a sample")
    return A, B, C


def dy_blocks_at(m: MetricField, x, y, check: bool = True):
    """Evaluate the y-derivatives of the blocks at batched points."""
    X = _as_batch(x, m.n)
    Y = _as_batch(y, m.n)
    if check:
        _check_domain(m, X, Y)
    return m.eval_dy_blocks(X, Y)


def eval(m: MetricField, x, y):  # noqa: A001 - spec operation name
    """Blocks (A, B, C) at a single point, symmetrized and validity-checked."""
    A, B, C = blocks_at(m, x, y, check=True)
    return A[0], B[0], C[0]


def eval_dy(m: MetricField, x, y):
    """Analytic y-derivatives (dA, dB, dC) at a single point.

    Each returned array has shape (n, n, n) with the last index the
    derivative direction.
    """
    dA, dB, dC = dy_blocks_at(m, x, y, check=True)
    return dA[0], dB[0], dC[0]


# ---------------------------------------------------------------------------
# presets


def flat_metric(n: int) -> MetricField:
    """The euclidean metric: all blocks vanish identically."""

    def blocks(X, Y):
        k = X.shape[0]
        z = np.zeros((k, n, n))
        return z, z.copy(), z.copy()

    def dy(X, Y):
        k = X.shape[0]
        z = np.zeros((k, n, n, n))
        return z, z.copy(), z.copy()

    return MetricField(n=n, eval_blocks=blocks, eval_dy_blocks=dy,
                       c0_norm_bound=1.0, is_flat=True)


def conformal_metric(n: int, epsilon: float) -> MetricField:
    """Conformal family h = exp(2*eps*x_1) * I.

    Blocks A = B = (exp(2*eps*x_1) - 1) I, C = 0; independent of y, so the
    y-derivative blocks vanish, and h(0) = I.
    """
    if epsilon < 0:
        raise ParameterError("epsilon must be >= 0")

    def blocks(X, Y):
        k = X.shape[0]
        s = np.expm1(2.0 * epsilon * X[:, 0])
        A = np.zeros((k, n, n))
        A[:, np.arange(n), np.arange(n)] = s[:, None]
        return A, A.copy(), np.zeros((k, n, n))

    def dy(X, Y):
        k = X.shape[0]
        z = np.zeros((k, n, n, n))
        return z, z.copy(), z.copy()

    bound = float(np.exp(4.0 * epsilon))  # sup of |h_pq| over the radius-2 ball
    return MetricField(n=n, eval_blocks=blocks, eval_dy_blocks=dy, c0_norm_bound=bound)


def random_trig_metric(n: int, epsilon: float, seed: int, terms: int = 3) -> MetricField:
    """Random finite trigonometric perturbation, deterministic in the seed.

    Each block entry is an epsilon-amplitude sum of sines of integer-frequency
    phases in (x, y); entries vanish at the origin (so h(0) = I) and are
    bounded by epsilon in absolute value everywhere. A and B are symmetric by
    construction, C is a full matrix.
    """
    if epsilon < 0:
        raise ParameterError("epsilon must be >= 0")
    rng = np.random.default_rng(seed)

    def draw_entry_params():
        coeff = rng.uniform(-1.0, 1.0, size=terms)
        coeff /= np.abs(coeff).sum()
        fx = rng.integers(-2, 3, size=(terms, n)).astype(float)
        fy = rng.integers(-2, 3, size=(terms, n)).astype(float)
        # avoid identically-zero phases
        dead = (np.abs(fx).sum(axis=1) + np.abs(fy).sum(axis=1)) == 0
        fy[dead, 0] = 1.0
        return coeff, fx, fy

    def draw_block(symmetric: bool):
        coeff = np.zeros((n, n, terms))
        fx = np.zeros((n, n, terms, n))
        fy = np.zeros((n, n, terms, n))
        for i in range(n):
            for j in range(i if symmetric else 0, n):
                c, gx, gy = draw_entry_params()
                coeff[i, j], fx[i, j], fy[i, j] = c, gx, gy
                if symmetric and j != i:
                    coeff[j, i], fx[j, i], fy[j, i] = c, gx, gy
        return coeff, fx, fy

    params = [draw_block(True), draw_block(True), draw_block(False)]

    def angles(X, Y, fx, fy):
        return np.einsum("md,ijtd->mijt", X, fx) + np.einsum("md,ijtd->mijt", Y, fy)

    def blocks(X, Y):
        out = []
        for coeff, fx, fy in params:
            ang = angles(X, Y, fx, fy)
            out.append(epsilon * np.einsum("ijt,mijt->mij", coeff, np.sin(ang)))
        return tuple(out)

    def dy(X, Y):
        out = []
        for coeff, fx, fy in params:
            ang = angles(X, Y, fx, fy)
            out.append(epsilon * np.einsum("ijt,mijt,ijtd->mijd", coeff, np.cos(ang), fy))
        return tuple(out)

    return MetricField(n=n, eval_blocks=blocks, eval_dy_blocks=dy,
                       c0_norm_bound=1.0 + epsilon)


def preset_metric(kind: str, n: int, epsilon: float = 0.0, seed: int = 0) -> MetricField:
    return MetricPreset(kind=kind, epsilon=epsilon, seed=seed).build(n)


# ---------------------------------------------------------------------------
# transformations


def dilate(m: MetricField, R: float) -> MetricField:
    """Pull back by the dilation S(x, y) = (x/R, y/R), normalized so h~(0) = h(0).

    Block values compose with S and every first derivative picks up a factor
    1/R, so the sampled sup of first differences scales exactly by 1/R. The
    admissible domain expands to radius 2R.
    """
    if R < 1:
        raise ParameterError(f"dilation factor must be >= 1, got {R}")

    def blocks(X, Y):
        return m.eval_blocks(X / R, Y / R)

    def dy(X, Y):
        dA, dB, dC = m.eval_dy_blocks(X / R, Y / R)
        return dA / R, dB / R, dC / R

    return MetricField(n=m.n, eval_blocks=blocks, eval_dy_blocks=dy,
                       c0_norm_bound=m.c0_norm_bound,
                       domain_radius=m.domain_radius * R, is_flat=m.is_flat)


def scale_metric(m: MetricField, s: float) -> MetricField:
    """The metric s*h in block form: A' = s A + (s-1) I, B' likewise, C' = s C."""
    if s <= 0:
        raise ParameterError("scale factor must be positive")

    def blocks(X, Y):
        A, B, C = m.eval_blocks(X, Y)
        n = m.n
        shift = (s - 1.0) * np.eye(n)
        return s * A + shift, s * B + shift, s * C

    def dy(X, Y):
        dA, dB, dC = m.eval_dy_blocks(X, Y)
        return s * dA, s * dB, s * dC

    bound = None if m.c0_norm_bound is None else s * m.c0_norm_bound
    return MetricField(n=m.n, eval_blocks=blocks, eval_dy_blocks=dy,
                       c0_norm_bound=bound, domain_radius=m.domain_radius,
                       is_flat=False)


def max_first_difference(m: MetricField, probes: np.ndarray, step: float) -> float:
    """Sampled sup over probes and coordinate directions of the forward
    difference quotients of the full metric matrix entries.

    `probes` has shape (k, 2n); points and their step-shifted neighbours must
    lie in the metric's domain.
    """
    probes = np.asarray(probes, dtype=float)
    n = m.n
    X, Y = probes[:, :n], probes[:, n:]
    h0 = full_matrix(*blocks_at(m, X, Y))
    worst = 0.0
    for d in range(2 * n):
        shifted = probes.copy()
        shifted[:, d] += step
        h1 = full_matrix(*blocks_at(m, shifted[:, :n], shifted[:, n:]))
        worst = max(worst, float(np.abs((h1 - h0) / step).max()))
    return worst
