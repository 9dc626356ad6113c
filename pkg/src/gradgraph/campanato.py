"""Ball-wise Hessian decay profiles and the sampled decay-iteration check.

decay_profile measures the two Campanato-type quantities over a family of
concentric balls: the squared Hessian mass and its mean-oscillation after
subtracting the ball average. Slopes of the log-log profiles estimate the
decay exponents; the fitted constants are the smallest that make the decay
inequalities hold on the sampled radius pairs.

hanlin_check is a sample-level verifier for the standard growth-iteration
lemma: it checks the hypothesis inequality on all sampled radius pairs,
compares epsilon against the canonical threshold of the iteration proof, and
fits the conclusion constant, flagging whether it is anchor-uniform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, HypothesisError, ParameterError
from .graph import Ball, PotentialGrid, hessian_field, region_quadrature


@dataclass(frozen=True)
class DecayProfile:
    center: np.ndarray
    radii: np.ndarray
    phi: np.ndarray          # integral of |D^2 w|^2 over each ball
    osc: np.ndarray          # integral of |D^2 w - mean|^2 over each ball
    means: np.ndarray        # (k, n, n) ball averages of the Hessian
    fitted_exponents: tuple  # (phi slope, osc slope) of log-log fits
    fitted_constants: tuple  # (C1, C2) smallest pairwise decay constants


def decay_profile(w: PotentialGrid, center, radii, min_cells: int = 6) -> DecayProfile:
    """Hessian decay data of w over concentric balls.

    Radii must be decreasing, each at least `min_cells` grid cells (below that
    the stencil noise dominates the fit), and every ball must stay inside the
    computational cube.
    """
    center = np.asarray(center, dtype=float)
    radii = np.asarray(sorted(radii, reverse=True), dtype=float)
    if len(radii) < 2:
        raise ParameterError("need at least two radii for a profile")
    if radii[-1] < min_cells * w.spacing - 1e-12:
        raise ParameterError(
            f"smallest radius {radii[-1]:.4g} is below {min_cells} grid cells")
    if np.any(np.abs(center) + radii[0] > 1.0 + 1e-12):
        raise DomainError("largest ball escapes the computational cube")

    H = hessian_field(w)
    n = w.n
    phi = np.zeros(len(radii))
    osc = np.zeros(len(radii))
    means = np.zeros((len(radii), n, n))
    for k, rho in enumerate(radii):
        quad = region_quadrature(w, Ball(tuple(center), float(rho)))
        M = np.moveaxis(quad.interp(H), -1, 0)
        wts = quad.weights
        vol = wts.sum()
        mean = np.einsum("q,qik->ik", wts, M) / vol
        phi[k] = float(wts @ np.einsum("qik,qik->q", M, M))
        diff = M - mean
        osc[k] = float(wts @ np.einsum("qik,qik->q", diff, diff))
        means[k] = mean

    log_r = np.log(radii)
    phi_slope = float(np.polyfit(log_r, np.log(np.maximum(phi, 1e-300)), 1)[0])
    if np.all(osc > 0):
        osc_slope = float(np.polyfit(log_r, np.log(osc), 1)[0])
    else:
        osc_slope = float("nan")

    c1 = 0.0
    c2 = 0.0
    for a in range(len(radii)):
        for b in range(a + 1, len(radii)):  # radii[b] < radii[a]
            ratio = radii[b] / radii[a]
            if phi[a] > 0:
                c1 = max(c1, phi[b] / (ratio**n * phi[a]))
            if osc[a] > 0:
                c2 = max(c2, osc[b] / (ratio ** (n + 2) * osc[a]))
    return DecayProfile(center=center, radii=radii, phi=phi, osc=osc,
                        means=means, fitted_exponents=(phi_slope, osc_slope),
                        fitted_constants=(c1, c2))


# ---------------------------------------------------------------------------
# growth-iteration verifier


@dataclass(frozen=True)
class HanLinInstance:
    A: float
    B: float
    alpha: float
    beta: float
    gamma: float
    epsilon: float
    R: float
    phi_samples: dict  # radius -> phi(radius)

    def __post_init__(self):
        if not (0 <= self.beta < self.gamma < self.alpha):
            raise ParameterError("need 0 <= beta < gamma < alpha")
        if self.A < 0 or self.B < 0 or self.epsilon < 0:
            raise ParameterError("A, B, epsilon must be nonnegative")
        radii = sorted(self.phi_samples)
        if len(radii) < 4:
            raise ParameterError("need samples at >= 4 radii")
        if radii[0] <= 0 or radii[-1] > self.R + 1e-12:
            raise ParameterError("sample radii must lie in (0, R]")
        vals = [self.phi_samples[r] for r in radii]
        if any(v < 0 for v in vals):
            raise ParameterError("phi must be nonnegative")
        if any(b < a - 1e-12 * max(1.0, abs(a)) for a, b in zip(vals, vals[1:])):
            raise ParameterError("phi must be nondecreasing")


def epsilon_star(A: float, alpha: float, beta: float, gamma: float) -> float:
    """Canonical smallness threshold of the growth-iteration proof.

    The iteration step picks tau with 2*A*tau^alpha = tau^gamma and requires
    epsilon <= tau^alpha; amplitudes below 1/2 are clamped so tau < 1.
    """
    A_eff = max(A, 0.51)
    tau = (2.0 * A_eff) ** (-1.0 / (alpha - gamma))
    return tau**alpha


@dataclass(frozen=True)
class HanLinResult:
    passed: bool
    c: float
    epsilon_star_ok: bool
    epsilon_star: float
    uniform_ok: bool
    per_anchor_c: dict


def hanlin_check(inst: HanLinInstance) -> HanLinResult:
    """Verify the iteration hypothesis and conclusion on the sampled radii.

    The hypothesis inequality is required on every sampled pair rho <= r
    (violations raise HypothesisError with the offending pair). The fitted c
    is the smallest constant making the conclusion inequality hold on all
    pairs; the check passes when epsilon is below the canonical threshold and
    the per-anchor fitted constants agree within 10 percent.
    """
    radii = sorted(inst.phi_samples)
    phi = {r: inst.phi_samples[r] for r in radii}
    for r in radii:
        for rho in radii:
            if rho > r:
                continue
            bound = inst.A * ((rho / r) ** inst.alpha + inst.epsilon) * phi[r] \
                + inst.B * r**inst.beta
            if phi[rho] > bound * (1 + 1e-12) + 1e-300:
                raise HypothesisError(
                    f"hypothesis fails at (rho, r) = ({rho:.6g}, {r:.6g}): "
                    f"{phi[rho]:.6g} > {bound:.6g}")

    eps_star = epsilon_star(inst.A, inst.alpha, inst.beta, inst.gamma)
    eps_ok = inst.epsilon < eps_star

    per_anchor = {}
    c_fit = 0.0
    for r in radii:
        best = 0.0
        for rho in radii:
            if rho > r:
                continue
            denom = (rho / r) ** inst.gamma * phi[r] + inst.B * r**inst.beta
            if denom <= 0:
                if phi[rho] > 0:
                    best = np.inf
                continue
            best = max(best, phi[rho] / denom)
        per_anchor[r] = best
        c_fit = max(c_fit, best)

    finite = [v for v in per_anchor.values() if np.isfinite(v) and v > 0]
    if c_fit > 0 and np.isfinite(c_fit) and finite:
        uniform_ok = (max(finite) - min(finite)) <= 0.1 * c_fit
    else:
        uniform_ok = np.isfinite(c_fit)

    # re-verify the conclusion with the fitted constant
    conclusion_ok = np.isfinite(c_fit)
    if conclusion_ok:
        for r in radii:
            for rho in radii:
                if rho > r:
                    continue
                rhs = c_fit * ((rho / r) ** inst.gamma * phi[r]
                               + inst.B * r**inst.beta)
                if phi[rho] > rhs * (1 + 1e-9) + 1e-300:
                    conclusion_ok = False

    passed = bool(conclusion_ok and eps_ok and uniform_ok)
    return HanLinResult(passed=passed, c=float(c_fit), epsilon_star_ok=bool(eps_ok),
                        epsilon_star=float(eps_star), uniform_ok=bool(uniform_ok),
                        per_anchor_c=per_anchor)
