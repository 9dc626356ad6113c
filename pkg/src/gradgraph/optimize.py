"""Volume minimization over clamped gradient graphs.

The discrete gradient is the exact adjoint of the volume quadrature: the
weighted Euler-Lagrange coefficients at the quadrature points are scattered
back through the interpolation and stencil maps, so a central difference of
the volume along any nodal direction matches the assembled gradient to
O(t^2), and quadratic potentials in a flat metric are exact critical points.

Free nodes keep one extra ring of clearance beyond the fixed two-node
boundary band: the stencil footprint of a node on the band edge sees the
half-weighted quadrature row of the integration region and would carry a
spurious O(1/h) gradient there, breaking exact quadratic stationarity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import DegeneracyError, ParameterError, SteepnessError
from .graph import (PotentialGrid, graph_fields, valid_cell_window, volume,
                    window_quadrature)
from .metric import MetricField
from .variation import fc_coefficients

FREE_MARGIN = 3  # two-node fixed band plus one quadrature-clearance ring


@dataclass(frozen=True)
class MinimizeConfig:
    tol_grad: float = 1e-8
    max_iters: int = 2000
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    lipschitz_cap: float = 0.9
    method: str = "lbfgs"  # "lbfgs" (default) or "gd"

    def __post_init__(self):
        if self.tol_grad <= 0 or not 0 < self.shrink < 1 or self.lipschitz_cap <= 0:
            raise ParameterError("bad minimizer configuration")


@dataclass(frozen=True)
class MinimizeResult:
    u: PotentialGrid
    final_volume: float
    grad_norm: float
    iterations: int
    converged: bool
    volumes: tuple = field(default=())
    message: str = ""


def free_node_mask(u: PotentialGrid) -> np.ndarray:
    idx = np.meshgrid(*([np.arange(u.N + 1)] * u.n), indexing="ij")
    mask = np.ones(u.values.shape, dtype=bool)
    for a in range(u.n):
        mask &= (idx[a] >= FREE_MARGIN) & (idx[a] <= u.N - FREE_MARGIN)
    return mask


def _adjoint_d1(phi: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(phi)
    core = [slice(None)] * phi.ndim
    plus = [slice(None)] * phi.ndim
    minus = [slice(None)] * phi.ndim
    core[axis] = slice(1, -1)
    plus[axis] = slice(2, None)
    minus[axis] = slice(None, -2)
    out[tuple(core)] = (phi[tuple(minus)] - phi[tuple(plus)]) / (2.0 * h)
    # contributions to the outermost nodes
    first = [slice(None)] * phi.ndim
    second = [slice(None)] * phi.ndim
    first[axis], second[axis] = 0, 1
    out[tuple(first)] = -phi[tuple(second)] / (2.0 * h)
    last = [slice(None)] * phi.ndim
    seclast = [slice(None)] * phi.ndim
    last[axis], seclast[axis] = -1, -2
    out[tuple(last)] = phi[tuple(seclast)] / (2.0 * h)
    return out


def _adjoint_d2(phi: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(phi)
    core = [slice(None)] * phi.ndim
    plus = [slice(None)] * phi.ndim
    minus = [slice(None)] * phi.ndim
    core[axis] = slice(1, -1)
    plus[axis] = slice(2, None)
    minus[axis] = slice(None, -2)
    out[tuple(core)] = (phi[tuple(minus)] - 2.0 * phi[tuple(core)]
                        + phi[tuple(plus)]) / (h * h)
    first = [slice(None)] * phi.ndim
    second = [slice(None)] * phi.ndim
    first[axis], second[axis] = 0, 1
    out[tuple(first)] = phi[tuple(second)] / (h * h)
    last = [slice(None)] * phi.ndim
    seclast = [slice(None)] * phi.ndim
    last[axis], seclast[axis] = -1, -2
    out[tuple(last)] = phi[tuple(seclast)] / (h * h)
    return out


def _volume_and_gradient(m: MetricField, u: PotentialGrid):
    """(volume, full nodal gradient) over the valid-cell integration region."""
    quad = window_quadrature(u, *valid_cell_window(u))
    Du_f, D2u_f = graph_fields(u)
    Du = quad.interp(Du_f).T
    D2u = np.moveaxis(quad.interp(D2u_f), -1, 0)
    from .variation import state_geometry

    sqrt_det, _, _ = state_geometry(m, quad.points, Du, D2u, check=True)
    vol = float(quad.weights @ sqrt_det)
    F, c = fc_coefficients(m, quad.points, Du, D2u, check=False)

    shape = u.values.shape
    size = u.values.size
    n = u.n
    h = u.spacing

    def scatter(point_vals):
        wv = (point_vals * quad.weights)[:, None] * quad.corner_w
        return np.bincount(quad.corner_flat.ravel(), weights=wv.ravel(),
                           minlength=size).reshape(shape)

    G = np.zeros(shape)
    for a in range(n):
        G += _adjoint_d2(scatter(F[:, a, a]), a, h)
        for b in range(a + 1, n):
            phi = scatter(F[:, a, b] + F[:, b, a])
            G += _adjoint_d1(_adjoint_d1(phi, b, h), a, h)
    if not m.is_flat:
        for k in range(n):
            G += _adjoint_d1(scatter(c[:, k]), k, h)
    return vol, G


def discrete_gradient(m: MetricField, u: PotentialGrid) -> np.ndarray:
    """Nodal gradient of the discrete volume; zero outside the free nodes.

    Pairing the returned array with any nodal perturbation supported on the
    free nodes reproduces the weak residual of that perturbation exactly.
    """
    _, G = _volume_and_gradient(m, u)
    G[~free_node_mask(u)] = 0.0
    return G


def _max_hessian(u: PotentialGrid) -> float:
    from .graph import hessian_field

    return float(np.abs(hessian_field(u)).max())


def minimize(m: MetricField, boundary_data: PotentialGrid,
             cfg: MinimizeConfig = MinimizeConfig()) -> MinimizeResult:
    """Descend the volume over the free interior nodes from the boundary data.

    The boundary data grid doubles as the initial iterate (its band and
    margin rings stay frozen). Iterates whose Hessian exceeds the Lipschitz
    cap, or whose graph degenerates, are rejected by the line search through
    a large objective value.
    """
    u0 = boundary_data
    if _max_hessian(u0) > cfg.lipschitz_cap:
        raise SteepnessError(
            f"initial data Hessian exceeds the cap {cfg.lipschitz_cap}")
    mask = free_node_mask(u0)
    free_idx = np.nonzero(mask.ravel())[0]
    base = u0.values.copy()

    def build(x):
        vals = base.copy().ravel()
        vals[free_idx] = x
        return u0.with_values(vals.reshape(base.shape))

    bad_value = 1e100

    def fg(x):
        u = build(x)
        if _max_hessian(u) > cfg.lipschitz_cap:
            return bad_value, np.zeros_like(x)
        try:
            vol, G = _volume_and_gradient(m, u)
        except DegeneracyError:
            return bad_value, np.zeros_like(x)
        return vol, G.ravel()[free_idx]

    volumes = []
    x0 = base.ravel()[free_idx].copy()

    if cfg.method == "lbfgs":
        def cb(xk):
            volumes.append(fg(xk)[0])

        x, fval, info = scipy.optimize.fmin_l_bfgs_b(
            fg, x0, factr=10.0, pgtol=cfg.tol_grad, maxiter=cfg.max_iters,
            maxfun=50 * cfg.max_iters, m=20, callback=cb)
        u_final = build(x)
        grad_norm = float(np.abs(fg(x)[1]).max())
        iterations = int(info["nit"])
        converged = grad_norm <= cfg.tol_grad
        message = info["task"].decode() if isinstance(info["task"], bytes) else str(info["task"])
    elif cfg.method == "gd":
        x = x0
        fval, g = fg(x)
        volumes.append(fval)
        step = 1.0
        iterations = 0
        converged = False
        message = "max_iters reached"
        for iterations in range(1, cfg.max_iters + 1):
            gnorm = float(np.abs(g).max())
            if gnorm <= cfg.tol_grad:
                converged = True
                message = "gradient tolerance reached"
                break
            g2 = float(g @ g)
            step = step / cfg.shrink  # allow growth after accepted steps
            while True:
                f_new, g_new = fg(x - step * g)
                if f_new <= fval - cfg.sufficient_decrease * step * g2:
                    break
                step *= cfg.shrink
                if step < 1e-18:
                    message = "line search failed"
                    break
            if step < 1e-18:
                break
            x = x - step * g
            fval, g = f_new, g_new
            volumes.append(fval)
        u_final = build(x)
        grad_norm = float(np.abs(g).max())
    else:
        raise ParameterError(f"unknown method {cfg.method!r}")

    return MinimizeResult(u=u_final, final_volume=float(fval),
                          grad_norm=grad_norm, iterations=iterations,
                          converged=bool(converged), volumes=tuple(volumes),
                          message=message)
