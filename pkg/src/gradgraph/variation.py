"""Euler-Lagrange coefficients of the volume functional and its diagnostics.

The weak form pairs the matrix coefficient F with the Hessian of the test
function and the vector coefficient c with its gradient; no derivative is
ever moved off the coefficients, so the weak residual coincides pointwise
with the first variation of the volume integrand. Test functions enter
through the same nodal-stencil/interpolation pipeline as the potential,
which makes the residual the exact directional derivative of the discrete
volume and lets central differences of `volume` verify it to O(t^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssemblyError, ParameterError, SupportError
from .graph import (PotentialGrid, Quadrature, gradient_field, hessian_field,
                    hessian, volume, window_quadrature, _d1, _d2, _fill_ring)
from .metric import MetricField, blocks_at, dy_blocks_at

_FD_SLOT_STEP = 1e-5  # central-difference step in the Du / D^2u / x slots


# ---------------------------------------------------------------------------
# coefficient assembly on arbitrary states (x, y, M)


def state_geometry(m: MetricField, X, Y, M, check: bool = True):
    """Induced-metric data and blocks at batched states (x, y=Du, M=D2u).

    Returns (sqrt_det_g, g_inv, blocks) where blocks is None for the flat
    metric.
    """
    from .errors import DegeneracyError

    n = m.n
    eye = np.eye(n)
    if m.is_flat:
        blocks = None
        g = eye + M @ M
    else:
        A, B, C = blocks_at(m, X, Y, check=check)
        MC = M @ C
        g = eye + M @ M + A + M @ B @ M + MC + np.swapaxes(MC, -1, -2)
        blocks = (A, B, C)
    g = 0.5 * (g + np.swapaxes(g, -1, -2))
    try:
        chol = np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise DegeneracyError("induced metric degenerate along the evaluation set")
    sqrt_det = np.prod(np.diagonal(chol, axis1=-2, axis2=-1), axis=-1)
    return sqrt_det, np.linalg.inv(g), blocks


def f_coefficient(m: MetricField, X, Y, M, check: bool = True) -> np.ndarray:
    """The matrix coefficient F at batched states; shape (k, n, n)."""
    sqrt_det, g_inv, blocks = state_geometry(m, X, Y, M, check=check)
    if blocks is None:
        core = M
    else:
        _, B, C = blocks
        core = M @ (np.eye(m.n) + B) + np.swapaxes(C, -1, -2)
    return sqrt_det[:, None, None] * (g_inv @ core)


def fc_coefficients(m: MetricField, X, Y, M, check: bool = True):
    """F and the lower-order vector c at batched states."""
    sqrt_det, g_inv, blocks = state_geometry(m, X, Y, M, check=check)
    n = m.n
    if blocks is None:
        F = sqrt_det[:, None, None] * (g_inv @ M)
        return F, np.zeros(M.shape[:-2] + (n,))
    _, B, C = blocks
    core = M @ (np.eye(n) + B) + np.swapaxes(C, -1, -2)
    F = sqrt_det[:, None, None] * (g_inv @ core)
    dA, dB, dC = dy_blocks_at(m, X, Y, check=False)
    gim = g_inv @ M
    term1 = np.einsum("mij,mijk->mk", g_inv, dA)
    term2 = 2.0 * np.einsum("mjs,msjk->mk", gim, dC)
    term3 = np.einsum("mdc,mcdk->mk", M @ gim, dB)
    c = 0.5 * sqrt_det[:, None] * (term1 + term2 + term3)
    return F, c


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ElTensors:
    """Per-point Euler-Lagrange coefficient bundle."""

    a: np.ndarray  # (n, n, n, n) leading coefficient a^{ij,kl}
    b: np.ndarray  # (n, n)
    c: np.ndarray  # (n,)
    F: np.ndarray  # (n, n), equals a^{ij,kl} u_ik + b^{jl}
    at: np.ndarray


@dataclass(frozen=True)
class TestFunction:
    """Compactly supported polynomial bump with analytic derivatives.

    eta(x) = prod_a (1 - ((x_a - c_a)/rho)^2)^4 on its support box, 0 outside;
    C^3 across the support boundary.
    """

    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.radius <= 0:
            raise ParameterError("bump radius must be positive")
        if any(abs(c) + self.radius >= 1.0 for c in self.center):
            raise ParameterError("bump support must lie in the open cube")

    def _s(self, pts):
        c = np.asarray(self.center)
        return (np.asarray(pts, dtype=float) - c) / self.radius

    def value(self, pts) -> np.ndarray:
        s = self._s(pts)
        q = np.maximum(1.0 - s * s, 0.0)
        return np.prod(q**4, axis=-1)

    def grad(self, pts) -> np.ndarray:
        s = self._s(pts)
        q = np.maximum(1.0 - s * s, 0.0)
        phi = q**4
        dphi = -8.0 * s * q**3 / self.radius
        prod = np.prod(phi, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(phi > 0, prod / phi, 0.0)
        return dphi * ratio

    def hess(self, pts) -> np.ndarray:
        s = self._s(pts)
        q = np.maximum(1.0 - s * s, 0.0)
        phi = q**4
        dphi = -8.0 * s * q**3 / self.radius
        d2phi = (-8.0 * q**3 + 48.0 * s * s * q * q) / self.radius**2
        k = s.shape[-1]
        out = np.zeros(s.shape[:-1] + (k, k))
        prod = np.prod(phi, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(phi > 0, prod[..., None] / phi, 0.0)
        for a in range(k):
            for b in range(k):
                if a == b:
                    out[..., a, a] = d2phi[..., a] * ratio[..., a]
                else:
                    with np.errstate(divide="ignore", invalid="ignore"):
                        ratio2 = np.where(phi[..., b] > 0,
                                          ratio[..., a] / phi[..., b], 0.0)
                    out[..., a, b] = dphi[..., a] * dphi[..., b] * ratio2
        return out

    def sample_nodal(self, u: PotentialGrid) -> np.ndarray:
        axes = np.meshgrid(*([u.axis] * u.n), indexing="ij")
        pts = np.stack([a.ravel() for a in axes], axis=1)
        return self.value(pts).reshape(u.values.shape)

    def node_window(self, u: PotentialGrid):
        """Strict node index range of the support per axis."""
        h = u.spacing
        lo, hi = [], []
        for c in self.center:
            lo.append(int(np.floor((c - self.radius + 1.0) / h)) + 1)
            hi.append(int(np.ceil((c + self.radius + 1.0) / h)) - 1)
        return np.array(lo), np.array(hi)


@dataclass(frozen=True)
class EllipticityReport:
    lambda_min: float
    worst_point: np.ndarray
    worst_sigma: np.ndarray
    per_point: np.ndarray


@dataclass(frozen=True)
class ClosenessReport:
    a0: np.ndarray
    sup_dev: float
    epsilon0: float

    @property
    def passed(self) -> bool:
        return self.sup_dev < self.epsilon0


# ---------------------------------------------------------------------------
# node states


def node_state(u: PotentialGrid, node):
    """(x, Du, D2u) at a stencil-valid node, by exact centered stencils."""
    node = tuple(int(i) for i in np.atleast_1d(node))
    x = u.node_coords(node)
    h = u.spacing
    v = u.values
    n = u.n
    Du = np.zeros(n)
    for a in range(n):
        up = tuple(node[d] + (1 if d == a else 0) for d in range(n))
        dn = tuple(node[d] - (1 if d == a else 0) for d in range(n))
        Du[a] = (v[up] - v[dn]) / (2.0 * h)
    return x, Du, hessian(u, node)


def el_coefficients(m: MetricField, u: PotentialGrid, node) -> ElTensors:
    """Assemble (a, b, c, F) at an interior node from the metric blocks."""
    x, Du, M = node_state(u, node)
    n = m.n
    X, Y, MM = x[None], Du[None], M[None]
    sqrt_det, g_inv, blocks = state_geometry(m, X, Y, MM, check=True)
    s = float(sqrt_det[0])
    gi = g_inv[0]
    if blocks is None:
        B = np.zeros((n, n))
        C = np.zeros((n, n))
    else:
        B, C = blocks[1][0], blocks[2][0]
    a = s * np.einsum("ij,kl->ijkl", gi, np.eye(n) + B.T)
    b = s * (gi @ C.T)
    _, c = fc_coefficients(m, X, Y, MM, check=False)
    F = np.einsum("ijkl,ik->jl", a, M) + b
    F_direct = f_coefficient(m, X, Y, MM, check=False)[0]
    if not np.allclose(F, F_direct, rtol=1e-12, atol=1e-12):
        raise AssemblyError("leading coefficient contraction mismatch")
    return ElTensors(a=a, b=b, c=c[0], F=F, at=x)


# ---------------------------------------------------------------------------
# weak residual and first variation


def _support_window(u: PotentialGrid, eta: TestFunction, extra_margin: int = 0):
    lo, hi = eta.node_window(u)
    margin = 2 + extra_margin
    if np.any(lo - margin < 1) or np.any(hi + margin > u.N - 1):
        raise SupportError(
            "test function support (plus stencil margin) reaches the boundary band")
    return tuple(lo - margin), tuple(hi + margin)


def eta_fields(u: PotentialGrid, eta: TestFunction):
    """Nodal bump value, stencil gradient and stencil Hessian arrays."""
    h = u.spacing
    nod = eta.sample_nodal(u)
    n = u.n
    grad = np.stack([_fill_ring(_d1(nod, a, h)) for a in range(n)])
    hess_arr = np.zeros((n, n) + nod.shape)
    for a in range(n):
        hess_arr[a, a] = _fill_ring(_d2(nod, a, h))
        for b in range(a + 1, n):
            mix = _fill_ring(_d1(_d1(nod, a, h), b, h))
            hess_arr[a, b] = mix
            hess_arr[b, a] = mix
    return nod, grad, hess_arr


def weak_residual(m: MetricField, u: PotentialGrid, eta: TestFunction,
                  fields=None) -> float:
    """Quadrature of F : D^2eta + c . Deta over the bump support.

    The bump is sampled at the nodes and differentiated by the same stencils
    as the potential, so the returned value is the exact derivative of the
    discrete volume along the nodal bump direction.
    """
    lo, hi = _support_window(u, eta)
    quad = window_quadrature(u, lo, hi)
    if fields is None:
        fields = gradient_field(u), hessian_field(u)
    Du = quad.interp(fields[0]).T
    D2u = np.moveaxis(quad.interp(fields[1]), -1, 0)
    _, eta1, eta2 = eta_fields(u, eta)
    e1 = quad.interp(eta1).T
    e2 = np.moveaxis(quad.interp(eta2), -1, 0)
    F, c = fc_coefficients(m, quad.points, Du, D2u, check=True)
    integrand = np.einsum("mjl,mjl->m", F, e2) + np.einsum("mk,mk->m", c, e1)
    return float(quad.weights @ integrand)


def first_variation_check(m: MetricField, u: PotentialGrid, eta: TestFunction,
                          t: float = 1e-5):
    """(analytic, numeric) volume derivatives along the bump direction.

    analytic is the weak residual; numeric is the central difference of the
    volume at nodal u +- t*eta. They agree to O(t^2).
    """
    analytic = weak_residual(m, u, eta)
    nod = eta.sample_nodal(u)
    vp = volume(u.add_scaled(nod, t), m)
    vm = volume(u.add_scaled(nod, -t), m)
    return analytic, (vp - vm) / (2.0 * t)


# ---------------------------------------------------------------------------
# Legendre ellipticity


def sym_basis(n: int) -> np.ndarray:
    """Frobenius-orthonormal basis of symmetric matrices, diagonal first."""
    out = []
    for i in range(n):
        e = np.zeros((n, n))
        e[i, i] = 1.0
        out.append(e)
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for i in range(n):
        for k in range(i + 1, n):
            e = np.zeros((n, n))
            e[i, k] = e[k, i] = inv_sqrt2
            out.append(e)
    return np.array(out)


def f_jacobian(m: MetricField, X, Y, M, step: float = _FD_SLOT_STEP) -> np.ndarray:
    """dF^{jl}/du_{ik} at batched states by symmetric entry differences.

    Entry (i, k) is perturbed together with (k, i); the value reported is half
    the directional derivative along E_ik + E_ki, which makes the flat-metric
    Legendre form at the origin equal to ((tr s)^2 + |s|^2)/2.
    """
    k_pts, n = M.shape[0], m.n
    J = np.zeros((k_pts, n, n, n, n))
    for i in range(n):
        for k in range(i, n):
            S = np.zeros((n, n))
            S[i, k] += 1.0
            S[k, i] += 1.0
            Fp = f_coefficient(m, X, Y, M + step * S, check=False)
            Fm = f_coefficient(m, X, Y, M - step * S, check=False)
            D = (Fp - Fm) / (4.0 * step)
            J[:, :, :, i, k] = D
            J[:, :, :, k, i] = D
    return J


def legendre_form_matrix(J: np.ndarray) -> np.ndarray:
    """Symmetrized quadratic form of dF/du on the orthonormal symmetric basis.

    J has shape (k, n, n, n, n) indexed [j, l, i, k]; the form pairs sigma_ij
    with sigma_kl. Returns (k, m, m) with m = n(n+1)/2.
    """
    n = J.shape[1]
    basis = sym_basis(n)
    B = np.einsum("pjlik,aij,bkl->pab", J, basis, basis)
    return 0.5 * (B + np.swapaxes(B, -1, -2))


def legendre_constant(m: MetricField, u: PotentialGrid, sample) -> EllipticityReport:
    """Minimum Legendre eigenvalue of dF/du over the sampled interior nodes."""
    nodes = np.atleast_2d(np.asarray(sample, dtype=int))
    if len(nodes) == 0:
        raise ParameterError("sample node set must be nonempty")
    X = np.zeros((len(nodes), m.n))
    Y = np.zeros_like(X)
    M = np.zeros((len(nodes), m.n, m.n))
    for idx, nd in enumerate(nodes):
        X[idx], Y[idx], M[idx] = node_state(u, nd)
    J = f_jacobian(m, X, Y, M)
    forms = legendre_form_matrix(J)
    w, v = np.linalg.eigh(forms)
    per_point = w[:, 0]
    worst = int(np.argmin(per_point))
    basis = sym_basis(m.n)
    sigma = np.einsum("a,aij->ij", v[worst, :, 0], basis)
    return EllipticityReport(lambda_min=float(per_point[worst]),
                             worst_point=X[worst], worst_sigma=sigma,
                             per_point=per_point)


def closeness_report(m: MetricField, u: PotentialGrid, a0, epsilon0: float,
                     sample, h_cells: int = 2) -> ClosenessReport:
    """Sup over sampled nodes of |beta - a0|, beta direction-averaged.

    beta is the segment-averaged Jacobian of the difference-quotient
    linearization, computed for each axis direction and averaged.
    """
    from . import linearize

    a0 = np.asarray(a0, dtype=float)
    nodes = np.atleast_2d(np.asarray(sample, dtype=int))
    h = h_cells * u.spacing
    sup_dev = 0.0
    for nd in nodes:
        betas = [linearize.beta(m, u, p, h, nd) for p in range(m.n)]
        avg = np.mean(betas, axis=0)
        sup_dev = max(sup_dev, float(np.abs(avg - a0).max()))
    return ClosenessReport(a0=a0, sup_dev=sup_dev, epsilon0=float(epsilon0))
