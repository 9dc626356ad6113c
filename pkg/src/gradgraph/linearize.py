"""Difference-quotient linearization of the nonlinear weak equation.

Forming the difference quotient of the potential turns the nonlinear weak
form into a linear double-divergence equation for the quotient, with
coefficients obtained by averaging slot derivatives of the assembled leading
coefficient along the straight segment between the states at a node and its
step-shifted neighbour. Segment averages use 5-point Gauss-Legendre in the
averaging parameter; slot derivatives use central differences.

Difference quotients of nodal data are anchored forward, f(x) =
(u(x + h e_p) - u(x)) / h, which makes the linear weak form agree node-wise
with the recombination of shifted nonlinear residuals (the discrete
fundamental-theorem identity) up to segment-quadrature error. Test-function
quotients keep the backward orientation (eta(x - h e_p) - eta(x)) / h so the
two residual routes pair against identical discrete fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, SupportError
from .graph import (PotentialGrid, gradient_field, hessian_field,
                    window_quadrature, _d1, _d2, _fill_ring)
from .metric import MetricField
from .variation import (TestFunction, eta_fields, f_coefficient,
                        fc_coefficients, f_jacobian, _FD_SLOT_STEP)

_T_NODES, _T_WEIGHTS = np.polynomial.legendre.leggauss(5)
_T_NODES = 0.5 * (_T_NODES + 1.0)
_T_WEIGHTS = 0.5 * _T_WEIGHTS


# ---------------------------------------------------------------------------
# difference quotients


@dataclass(frozen=True)
class DiffQuotient:
    """Forward-anchored difference quotient of a potential grid."""

    p: int
    h_cells: int
    h: float
    f: PotentialGrid


def _step_cells(u: PotentialGrid, h: float) -> int:
    ratio = h / u.spacing
    cells = int(round(ratio))
    if cells < 1 or abs(ratio - cells) > 1e-9:
        raise ParameterError(
            f"step {h} must be a positive integer multiple of the spacing "
            f"{u.spacing}")
    return cells


def _shift_back(arr: np.ndarray, axis: int, cells: int) -> np.ndarray:
    """arr(x + cells*e_axis) with zero fill past the upper edge."""
    out = np.zeros_like(arr)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    src[axis] = slice(cells, None)
    dst[axis] = slice(None, -cells)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _shift_fwd(arr: np.ndarray, axis: int, cells: int) -> np.ndarray:
    """arr(x - cells*e_axis) with zero fill below the lower edge."""
    out = np.zeros_like(arr)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    src[axis] = slice(None, -cells)
    dst[axis] = slice(cells, None)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def difference_quotient(u: PotentialGrid, p: int, h: float) -> DiffQuotient:
    """f = (u(x + h e_p) - u(x)) / h; valid at nodes with i_p <= N - h/spacing."""
    if not 0 <= p < u.n:
        raise ParameterError(f"axis {p} out of range for n={u.n}")
    cells = _step_cells(u, h)
    vals = (_shift_back(u.values, p, cells) - u.values) / h
    # zero the invalid upper band explicitly
    sl = [slice(None)] * u.n
    sl[p] = slice(u.N + 1 - cells, None)
    vals[tuple(sl)] = 0.0
    f = PotentialGrid(n=u.n, N=u.N, values=vals, description=f"dq(p={p},h={h:g})")
    return DiffQuotient(p=p, h_cells=cells, h=cells * u.spacing, f=f)


def _nodal_states(u: PotentialGrid):
    """(X, Du, M) stacked over all nodes (stencil ring replicated)."""
    axes = np.meshgrid(*([u.axis] * u.n), indexing="ij")
    X = np.stack([a.ravel() for a in axes], axis=1)
    Du = gradient_field(u).reshape(u.n, -1).T
    M = hessian_field(u).reshape(u.n, u.n, -1)
    return X, Du, np.moveaxis(M, -1, 0)


def _segment_states(u: PotentialGrid, p: int, cells: int):
    """States at x and at x + h e_p for every node (zero past the edge)."""
    X, Du, M = _nodal_states(u)
    shape = u.values.shape
    n = u.n
    Xh = X.copy()
    Xh[:, p] += cells * u.spacing
    Du_grid = np.moveaxis(Du, 0, -1).reshape((n,) + shape)
    Duh = np.stack([_shift_back(Du_grid[a], p, cells).ravel()
                    for a in range(n)], axis=1)
    M_grid = np.moveaxis(M, 0, -1).reshape((n, n) + shape)
    Mh = np.zeros_like(M)
    for a in range(n):
        for b in range(n):
            Mh[:, a, b] = _shift_back(M_grid[a, b], p, cells).ravel()
    return (X, Du, M), (Xh, Duh, Mh)


def valid_node_window(u: PotentialGrid, p: int, cells: int):
    """Node window where segment coefficients are defined: stencils valid at
    both x and x + h e_p."""
    lo = np.ones(u.n, dtype=int)
    hi = np.full(u.n, u.N - 1, dtype=int)
    hi[p] = u.N - 1 - cells
    return lo, hi


# ---------------------------------------------------------------------------
# segment-averaged coefficients


def beta(m: MetricField, u: PotentialGrid, p: int, h: float, node) -> np.ndarray:
    """Segment-averaged Jacobian dF/du_{ik} at one node; layout [j, l, i, k]."""
    cells = _step_cells(u, h)
    node = tuple(int(i) for i in np.atleast_1d(node))
    lo, hi = valid_node_window(u, p, cells)
    if any(i < a or i > b for i, a, b in zip(node, lo, hi)):
        raise SupportError(f"node {node} outside the segment-valid window")
    from .variation import node_state

    x0, y0, M0 = node_state(u, node)
    node_h = tuple(i + (cells if a == p else 0) for a, i in enumerate(node))
    x1, y1, M1 = node_state(u, node_h)
    Xt = x0[None] + _T_NODES[:, None] * (x1 - x0)[None]
    Yt = y0[None] + _T_NODES[:, None] * (y1 - y0)[None]
    Mt = M0[None] + _T_NODES[:, None, None] * (M1 - M0)[None]
    J = f_jacobian(m, Xt, Yt, Mt)
    return np.einsum("t,tjlik->jlik", _T_WEIGHTS, J)


def _slot_derivatives(m: MetricField, X, Y, M, p: int, step: float = _FD_SLOT_STEP):
    """(dF/du_k, dF/dx_p) at batched states by central slot differences."""
    k_pts, n = X.shape
    dF_du = np.zeros((k_pts, n, n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        Fp = f_coefficient(m, X, Y + e, M, check=False)
        Fm = f_coefficient(m, X, Y - e, M, check=False)
        dF_du[:, :, :, k] = (Fp - Fm) / (2.0 * step)
    e = np.zeros(n)
    e[p] = step
    Fp = f_coefficient(m, X + e, Y, M, check=False)
    Fm = f_coefficient(m, X - e, Y, M, check=False)
    dF_dx = (Fp - Fm) / (2.0 * step)
    return dF_du, dF_dx


@dataclass(frozen=True)
class LinearCoefficients:
    """Node-indexed coefficients of the linearized weak equation.

    Arrays carry component axes first and node axes last; entries outside the
    segment-valid node window are zero.
    """

    p: int
    h: float
    h_cells: int
    beta: np.ndarray    # (n, n, n, n, *nodes) layout [j, l, i, k]
    gamma1: np.ndarray  # (n, n, n, *nodes) layout [j, l, k]
    gamma2: np.ndarray  # (n, n, *nodes)
    gamma: np.ndarray   # (n, n, *nodes)
    psi: np.ndarray     # (n, *nodes)
    zeta: np.ndarray    # (*nodes,)
    node_lo: np.ndarray
    node_hi: np.ndarray
    quad_points: int = 5


def linear_coefficients(m: MetricField, u: PotentialGrid, p: int, h: float,
                        a_k=None, b_fn=None) -> LinearCoefficients:
    """Assemble beta, gamma, psi, zeta on the segment-valid node window.

    By default psi is the lower-order vector of the volume equation and zeta
    vanishes; callables a_k(X, Du, M) -> (k, n) and b_fn(X, Du, M) -> (k,)
    cover the general lower-order terms.
    """
    if not 0 <= p < u.n:
        raise ParameterError(f"axis {p} out of range for n={u.n}")
    cells = _step_cells(u, h)
    shape = u.values.shape
    n = u.n
    (X0, Y0, M0), (X1, Y1, M1) = _segment_states(u, p, cells)
    k_pts = X0.shape[0]

    beta_acc = np.zeros((k_pts, n, n, n, n))
    g1_acc = np.zeros((k_pts, n, n, n))
    g2_acc = np.zeros((k_pts, n, n))
    for t, w in zip(_T_NODES, _T_WEIGHTS):
        Xt = X0 + t * (X1 - X0)
        Yt = Y0 + t * (Y1 - Y0)
        Mt = M0 + t * (M1 - M0)
        beta_acc += w * f_jacobian(m, Xt, Yt, Mt)
        dF_du, dF_dx = _slot_derivatives(m, Xt, Yt, Mt, p)
        g1_acc += w * dF_du
        g2_acc += w * dF_dx

    # f_k = forward difference quotient of the nodal gradient
    Du_f = gradient_field(u)
    fk = np.stack([(_shift_back(Du_f[a], p, cells) - Du_f[a]) / (cells * u.spacing)
                   for a in range(n)])
    fk_flat = fk.reshape(n, -1).T
    gamma = np.einsum("mjlk,mk->mjl", g1_acc, fk_flat) + g2_acc

    if a_k is None:
        _, psi = fc_coefficients(m, X0, Y0, M0, check=False)
    else:
        psi = np.asarray(a_k(X0, Y0, M0), dtype=float)
    zeta = (np.zeros(k_pts) if b_fn is None
            else np.asarray(b_fn(X0, Y0, M0), dtype=float))

    lo, hi = valid_node_window(u, p, cells)
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(slice(a, b + 1) for a, b in zip(lo, hi))] = True
    flat_mask = mask.ravel()

    def to_field(arr, comps):
        out = np.zeros(comps + shape)
        flat = out.reshape(comps + (-1,))
        take = arr.reshape((k_pts,) + comps)
        flat[..., flat_mask] = np.moveaxis(take[flat_mask], 0, -1)
        return out

    return LinearCoefficients(
        p=p, h=cells * u.spacing, h_cells=cells,
        beta=to_field(beta_acc, (n, n, n, n)),
        gamma1=to_field(g1_acc, (n, n, n)),
        gamma2=to_field(g2_acc, (n, n)),
        gamma=to_field(gamma, (n, n)),
        psi=to_field(psi, (n,)),
        zeta=to_field(zeta, ()),
        node_lo=lo, node_hi=hi)


# ---------------------------------------------------------------------------
# weak residuals


def _eta_quotient_fields(u: PotentialGrid, eta: TestFunction, p: int, cells: int):
    """(eta2, eta1^{-h_p}, eta0^{-h_p}) nodal arrays."""
    h = cells * u.spacing
    nod, grad, hess_arr = eta_fields(u, eta)
    eta1m = np.stack([(_shift_fwd(grad[a], p, cells) - grad[a]) / h
                      for a in range(u.n)])
    eta0m = (_shift_fwd(nod, p, cells) - nod) / h
    return hess_arr, eta1m, eta0m


def _linear_window(u: PotentialGrid, eta: TestFunction, p: int, cells: int,
                   node_lo, node_hi):
    lo, hi = eta.node_window(u)
    lo = lo - 2
    hi = hi + 2
    hi[p] += cells  # shifted test-function quotients reach h further
    if np.any(lo < node_lo) or np.any(hi > node_hi):
        raise SupportError(
            "test function support must stay in the h-shrunken interior band")
    return tuple(lo), tuple(hi)


def linear_weak_residual(lc: LinearCoefficients, dq: DiffQuotient,
                         eta: TestFunction) -> float:
    """Residual of the linearized equation for the quotient f against eta."""
    if dq.p != lc.p or dq.h_cells != lc.h_cells:
        raise ParameterError("difference quotient and coefficients disagree on (p, h)")
    u = dq.f
    lo, hi = _linear_window(u, eta, lc.p, lc.h_cells, lc.node_lo, lc.node_hi)
    quad = window_quadrature(u, lo, hi)
    fH = hessian_field(u)
    T = np.einsum("jlik...,ik...->jl...", lc.beta, fH) + lc.gamma
    eta2, eta1m, eta0m = _eta_quotient_fields(u, eta, lc.p, lc.h_cells)
    Ti = np.moveaxis(quad.interp(T), -1, 0)
    e2 = np.moveaxis(quad.interp(eta2), -1, 0)
    s1 = quad.interp(lc.psi).T
    e1m = quad.interp(eta1m).T
    z = quad.interp(lc.zeta)
    e0m = quad.interp(eta0m)
    integrand = (np.einsum("mjl,mjl->m", Ti, e2)
                 + np.einsum("mk,mk->m", s1, e1m) + z * e0m)
    return float(quad.weights @ integrand)


def recombined_residual(m: MetricField, u: PotentialGrid, p: int, h: float,
                        eta: TestFunction) -> float:
    """The same residual by recombining shifted nonlinear residual terms.

    Pairs the forward difference quotient of the nodal leading coefficient
    with the bump Hessian and the lower-order vector with the backward bump
    quotients; equals `linear_weak_residual` up to segment-quadrature error.
    """
    cells = _step_cells(u, h)
    lo_n, hi_n = valid_node_window(u, p, cells)
    lo, hi = _linear_window(u, eta, p, cells, lo_n, hi_n)
    quad = window_quadrature(u, lo, hi)
    n = u.n
    shape = u.values.shape
    X, Du, M = _nodal_states(u)
    F, c = fc_coefficients(m, X, Du, M, check=False)
    F_field = np.moveaxis(F, 0, -1).reshape((n, n) + shape)
    c_field = np.moveaxis(c, 0, -1).reshape((n,) + shape)
    hq = cells * u.spacing
    DF = np.zeros_like(F_field)
    for j in range(n):
        for l in range(n):
            DF[j, l] = (_shift_back(F_field[j, l], p, cells) - F_field[j, l]) / hq
    eta2, eta1m, eta0m = _eta_quotient_fields(u, eta, p, cells)
    DFi = np.moveaxis(quad.interp(DF), -1, 0)
    e2 = np.moveaxis(quad.interp(eta2), -1, 0)
    ci = quad.interp(c_field).T
    e1m = quad.interp(eta1m).T
    integrand = (np.einsum("mjl,mjl->m", DFi, e2)
                 + np.einsum("mk,mk->m", ci, e1m))
    return float(quad.weights @ integrand)
