"""Constant-coefficient double-divergence boundary value solver.

Galerkin projection in the energy inner product <v, w> = int c0^{ij,kl}
v_ik w_jl over C^1-conforming tensor-product cubic Hermite elements (4^n
local degrees of freedom per cell: value, axis slopes, mixed slopes). The
trial function is clamped to the boundary data through all Hermite degrees
of freedom on the constrained node set, which realizes w = g, Dw = Dg there.

With constant coefficients the local stiffness matrix is a single Kronecker
contraction of 1-D Gram matrices, assembled once and tiled over the cells;
4-point Gauss-Legendre per axis makes every entry exact for the cubic basis.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, DomainError, EllipticityError, ParameterError
from .graph import (CubeRegion, PotentialGrid, hessian_field,
                    region_quadrature, _ball_cell_overlap)
from .variation import legendre_form_matrix

_GL3_T, _GL3_W = np.polynomial.legendre.leggauss(3)
_GL3_T = 0.5 * (_GL3_T + 1.0)
_GL3_W = 0.5 * _GL3_W

_GL4_T, _GL4_W = np.polynomial.legendre.leggauss(4)
_GL4_T = 0.5 * (_GL4_T + 1.0)
_GL4_W = 0.5 * _GL4_W


# ---------------------------------------------------------------------------
# constant coefficient tensors


def tensor_legendre_min(c0: np.ndarray) -> float:
    """Smallest eigenvalue of the tensor's quadratic form on symmetric sigma."""
    c0 = np.asarray(c0, dtype=float)
    J = np.transpose(c0, (1, 3, 0, 2))[None]  # [j,l,i,k] layout
    form = legendre_form_matrix(J)[0]
    return float(np.linalg.eigvalsh(form)[0])


def tensor_legendre_max(c0: np.ndarray) -> float:
    c0 = np.asarray(c0, dtype=float)
    J = np.transpose(c0, (1, 3, 0, 2))[None]
    form = legendre_form_matrix(J)[0]
    return float(np.linalg.eigvalsh(form)[-1])


@dataclass(frozen=True)
class ConstantTensor:
    """Constant 4-index coefficient tensor with a declared Legendre constant."""

    c0: np.ndarray
    lam: float

    def __post_init__(self):
        c0 = np.asarray(self.c0, dtype=float)
        if c0.ndim != 4 or len(set(c0.shape)) != 1:
            raise ParameterError("coefficient tensor must have shape (n, n, n, n)")
        object.__setattr__(self, "c0", c0)
        if self.lam <= 0:
            raise EllipticityError("declared Legendre constant must be positive")
        lam_min = tensor_legendre_min(c0)
        if lam_min < self.lam - 1e-10:
            raise EllipticityError(
                f"tensor Legendre minimum {lam_min:.6g} below declared {self.lam:.6g}")

    @property
    def n(self) -> int:
        return self.c0.shape[0]


def biharmonic_tensor(n: int) -> ConstantTensor:
    """c0^{ij,kl} = delta^{ik} delta^{jl}: the energy is int (Laplacian)^2."""
    eye = np.eye(n)
    return ConstantTensor(c0=np.einsum("ik,jl->ijkl", eye, eye), lam=1.0)


# ---------------------------------------------------------------------------
# Hermite basis machinery


def _shape_1d(order: int, t: np.ndarray, h: float) -> np.ndarray:
    """The four cubic Hermite shape functions on a cell, derivative `order`.

    Local index m = 2*corner + type with type 0 = value, 1 = slope; slope
    degrees of freedom are scaled by h so DOF values are physical derivatives.
    Returns shape (4, len(t)) in physical derivative units.
    """
    t = np.asarray(t)
    if order == 0:
        rows = [2 * t**3 - 3 * t**2 + 1.0,
                h * (t**3 - 2 * t**2 + t),
                -2 * t**3 + 3 * t**2,
                h * (t**3 - t**2)]
    elif order == 1:
        rows = [(6 * t**2 - 6 * t) / h,
                3 * t**2 - 4 * t + 1.0,
                (-6 * t**2 + 6 * t) / h,
                3 * t**2 - 2 * t]
    elif order == 2:
        rows = [(12 * t - 6.0) / h**2,
                (6 * t - 4.0) / h,
                (-12 * t + 6.0) / h**2,
                (6 * t - 2.0) / h]
    elif order == 3:
        one = np.ones_like(t)
        rows = [12.0 / h**3 * one, 6.0 / h**2 * one,
                -12.0 / h**3 * one, 6.0 / h**2 * one]
    else:
        raise ParameterError("derivative order must be 0..3")
    return np.stack(rows)


def _gram_1d(h: float) -> dict:
    """G[(o1, o2)][a, b] = int_cell phi_a^{(o1)} phi_b^{(o2)} dx, exactly."""
    vals = {o: _shape_1d(o, _GL4_T, h) for o in (0, 1, 2)}
    w = _GL4_W * h
    return {(o1, o2): np.einsum("aq,bq,q->ab", vals[o1], vals[o2], w)
            for o1 in (0, 1, 2) for o2 in (0, 1, 2)}


def _local_stiffness(c0: np.ndarray, n: int, h: float) -> np.ndarray:
    """Cell stiffness for the constant tensor: Kronecker contraction of Grams."""
    gram = _gram_1d(h)
    size = 4**n
    K = np.zeros((size, size))
    for i, j, k, l in itertools.product(range(n), repeat=4):
        coeff = c0[i, j, k, l]
        if coeff == 0.0:
            continue
        block = np.ones((1, 1))
        for a in range(n):
            o1 = (a == i) + (a == k)
            o2 = (a == j) + (a == l)
            block = np.kron(block, gram[(o1, o2)])
        K += coeff * block
    return K


def _local_to_global(n: int, N: int):
    """Map (cell, local DOF) -> global DOF id.

    Global id = node_flat * 2^n + type_flat; local ordering is the Kronecker
    ordering of per-axis (corner, type) with m = 2*corner + type.
    """
    locals_per_axis = [(m // 2, m % 2) for m in range(4)]
    combos = list(itertools.product(locals_per_axis, repeat=n))
    corner = np.array([[c for c, _ in combo] for combo in combos])
    typ = np.array([[t for _, t in combo] for combo in combos])
    node_stride = np.array([(N + 1) ** (n - 1 - a) for a in range(n)])
    type_stride = np.array([2 ** (n - 1 - a) for a in range(n)])

    cells = np.array(list(itertools.product(range(N), repeat=n)))
    node = cells[:, None, :] + corner[None, :, :]
    gid = (node * node_stride).sum(axis=2) * 2**n + (typ * type_stride).sum(axis=1)
    return cells, gid  # (ncells, n), (ncells, 4^n)


# ---------------------------------------------------------------------------
# order-4 derivative stencils for Hermite DOF extraction


_EDGE0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_EDGE1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0


def _deriv4_axis(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """First derivative along an axis, order-4 stencils, exact on quartics."""
    v = np.moveaxis(values, axis, -1)
    out = np.zeros_like(v)
    out[..., 2:-2] = (v[..., :-4] - 8 * v[..., 1:-3]
                      + 8 * v[..., 3:-1] - v[..., 4:]) / (12.0 * h)
    for k in range(5):
        out[..., 0] += _EDGE0[k] * v[..., k] / h
        out[..., 1] += _EDGE1[k] * v[..., k] / h
        out[..., -1] += -_EDGE0[k] * v[..., -1 - k] / h
        out[..., -2] += -_EDGE1[k] * v[..., -1 - k] / h
    return np.moveaxis(out, -1, axis)


def hermite_dofs(u: PotentialGrid) -> np.ndarray:
    """All 2^n Hermite DOF fields of a nodal grid; shape (*(N+1)^n, 2^n).

    Type bit a set means one derivative along axis a; derivative extraction
    uses order-4 stencils so tensor cubics are reproduced exactly.
    """
    n, h = u.n, u.spacing
    fields = {0: u.values}
    for type_flat in range(1, 2**n):
        bits = [(type_flat >> (n - 1 - a)) & 1 for a in range(n)]
        cur = u.values
        for a in range(n):
            if bits[a]:
                cur = _deriv4_axis(cur, a, h)
        fields[type_flat] = cur
    return np.stack([fields[t] for t in range(2**n)], axis=-1)


# ---------------------------------------------------------------------------
# solve


@dataclass(frozen=True)
class BvpSolution:
    w: PotentialGrid
    energy: float
    iterations: int
    residual: float
    method: str
    free_count: int
    dofs: np.ndarray  # full Hermite DOF vector of w


def _free_node_mask(g: PotentialGrid, region):
    N = g.N
    if region is None or isinstance(region, CubeRegion):
        w = 1.0 if region is None else region.half_width
        h = g.spacing
        lo_node = int(round((1.0 - w) / h))
        hi_node = N - lo_node
        if hi_node - lo_node < 6:
            raise DomainError("cube region too small for the Hermite solve")
        idx = np.meshgrid(*([np.arange(N + 1)] * g.n), indexing="ij")
        mask = np.ones(g.values.shape, dtype=bool)
        for a in range(g.n):
            mask &= (idx[a] >= lo_node + 2) & (idx[a] <= hi_node - 2)
        cells = (lo_node, hi_node)
        return mask, cells
    raise ParameterError(
        "solve handles cube regions; use disk_clamped_solve for the disk variant")


def assemble_stiffness(c0: ConstantTensor, g: PotentialGrid,
                       cell_range: tuple) -> sp.csr_matrix:
    """Global sparse stiffness over the cell window [lo, hi) per axis."""
    n, N, h = g.n, g.N, g.spacing
    K_loc = _local_stiffness(c0.c0, n, h)
    cells, gid = _local_to_global(n, N)
    lo, hi = cell_range
    keep = np.all((cells >= lo) & (cells < hi), axis=1)
    gid = gid[keep]
    ncell, nloc = gid.shape
    rows = np.repeat(gid, nloc, axis=1).ravel()
    cols = np.tile(gid, (1, nloc)).ravel()
    data = np.tile(K_loc.ravel(), ncell)
    ndof = (N + 1) ** n * 2**n
    K = sp.coo_matrix((data, (rows, cols)), shape=(ndof, ndof)).tocsr()
    skew = abs(K - K.T)
    if skew.nnz and skew.max() > 1e-12 * max(abs(K).max(), 1.0):
        raise AssemblyError("stiffness matrix lost symmetry")
    return 0.5 * (K + K.T).tocsr()


def solve(c0: ConstantTensor, g: PotentialGrid, region=None,
          method: str = "auto", tol: float = 1e-12, x0=None) -> BvpSolution:
    """Solve the clamped double-divergence problem with boundary data g.

    The solution satisfies <w - g, phi> = -int c0 g_ik phi_jl for every free
    Hermite basis function phi; w equals g (all DOFs) on the constrained node
    set. For a Ball region the form is assembled over the whole cube and every
    node outside the open ball is constrained, which imposes the clamped
    condition across the discrete boundary layer of the ball.
    """
    if tensor_legendre_min(c0.c0) <= 0:
        raise EllipticityError("coefficient tensor is not Legendre-positive")
    n, N = g.n, g.N
    mask, cell_range = _free_node_mask(g, region)
    K = assemble_stiffness(c0, g, cell_range)
    ghat = hermite_dofs(g).reshape(-1)

    free = np.repeat(mask.ravel(), 2**n)
    rhs = -(K @ ghat)[free]
    Kff = K[free][:, free].tocsc()

    nfree = int(free.sum())
    use_direct = method == "direct" or (method == "auto" and nfree <= 40000)
    iterations = 0
    if use_direct and method != "cg":
        try:
            lu = spla.splu(Kff)
        except RuntimeError as exc:
            raise AssemblyError(f"discrete system could not be factorized: {exc}")
        vf = lu.solve(rhs)
        used = "direct"
    else:
        diag = Kff.diagonal()
        if np.any(diag <= 0):
            raise AssemblyError("system diagonal not positive; assembly failed")
        precond = spla.LinearOperator(Kff.shape, matvec=lambda z: z / diag)
        count = {"it": 0}

        def cb(_):
            count["it"] += 1

        vf, info = spla.cg(Kff, rhs, x0=x0, rtol=tol, atol=0.0, M=precond,
                           maxiter=50 * nfree, callback=cb)
        if info != 0:
            raise AssemblyError(f"conjugate gradient did not converge (info={info})")
        iterations = count["it"]
        used = "cg"

    res = float(np.linalg.norm(Kff @ vf - rhs) / max(np.linalg.norm(rhs), 1e-300))
    v = np.zeros_like(ghat)
    v[free] = vf
    wd = ghat + v
    energy = float(v @ (K @ v))
    w_vals = wd.reshape(g.values.shape + (2**n,))[..., 0]
    w = PotentialGrid(n=n, N=N, values=w_vals.copy(), description="bvp solution")
    return BvpSolution(w=w, energy=energy, iterations=iterations, residual=res,
                       method=used, free_count=nfree, dofs=wd)


# ---------------------------------------------------------------------------
# clamped-disk variant (n = 2): Nitsche enforcement on the circle


def _hermite_rows(n: int, N: int, pts: np.ndarray, order_vecs) -> dict:
    """Sparse rows evaluating mixed derivatives of the Hermite interpolant.

    order_vecs are per-axis derivative-order tuples (each entry <= 3).
    """
    h = 2.0 / N
    t = (np.asarray(pts) + 1.0) / h
    ci = np.clip(np.floor(t).astype(int), 0, N - 1)
    loc = t - ci
    ndof = (N + 1) ** n * 2**n
    digs_tab = []
    for mloc in range(4**n):
        mm = mloc
        digs = []
        for a in range(n):
            digs.append(mm // 4 ** (n - 1 - a))
            mm %= 4 ** (n - 1 - a)
        digs_tab.append(digs)
    cols = {tuple(o): [] for o in order_vecs}
    data = {tuple(o): [] for o in order_vecs}
    max_o = max(max(o) for o in order_vecs)
    for cell, s in zip(ci, loc):
        vals = {a: {o: _shape_1d(o, np.array([s[a]]), h)[:, 0]
                    for o in range(max_o + 1)} for a in range(n)}
        gids = []
        for digs in digs_tab:
            nid = 0
            tid = 0
            for a in range(n):
                nid = nid * (N + 1) + cell[a] + digs[a] // 2
                tid = tid * 2 + digs[a] % 2
            gids.append(nid * 2**n + tid)
        for o in order_vecs:
            o = tuple(o)
            prod = np.ones(1)
            for a in range(n):
                prod = np.kron(prod, vals[a][o[a]])
            cols[o].extend(gids)
            data[o].extend(prod)
    rows = np.repeat(np.arange(len(pts)), 4**n)
    return {tuple(o): sp.coo_matrix((data[tuple(o)], (rows, cols[tuple(o)])),
                                    shape=(len(pts), ndof)).tocsr()
            for o in order_vecs}


def _cell_stiffness_quad(c0: np.ndarray, n: int, h: float,
                         pts_local: np.ndarray, wts: np.ndarray) -> np.ndarray:
    """Local stiffness from explicit quadrature points in cell coordinates."""
    shape_vals = {a: {o: _shape_1d(o, pts_local[:, a], h) for o in (0, 1, 2)}
                  for a in range(n)}

    def basis_d2(i, k):
        prod = np.ones((1, len(wts)))
        for a in range(n):
            o = (a == i) + (a == k)
            prod = (prod[:, None, :] * shape_vals[a][o][None, :, :]).reshape(
                -1, len(wts))
        return prod  # (4^n, q)

    K = np.zeros((4**n, 4**n))
    for i, j, k, l in itertools.product(range(n), repeat=4):
        if c0[i, j, k, l] == 0.0:
            continue
        K += c0[i, j, k, l] * np.einsum("aq,bq,q->ab",
                                        basis_d2(i, k), basis_d2(j, l), wts)
    return K


def _straddle_stiffness(c0: np.ndarray, h: float, cell_lo: np.ndarray,
                        center: np.ndarray, radius: float, sub: int) -> np.ndarray:
    """Masked local stiffness of a circle-straddling cell (n = 2).

    The cell is split into sub x sub subcells; each subcell's Gauss points are
    weighted by its exact disk-overlap fraction.
    """
    pts, wts = [], []
    hs = 1.0 / sub
    for a in range(sub):
        for b in range(sub):
            lo = cell_lo + h * np.array([a * hs, b * hs])
            hi = lo + h * hs
            frac = _ball_cell_overlap(2, center, radius, lo, hi) / (h * hs) ** 2
            if frac <= 0.0:
                continue
            px = a * hs + hs * _GL3_T
            py = b * hs + hs * _GL3_T
            P = np.stack(np.meshgrid(px, py, indexing="ij"), axis=-1).reshape(-1, 2)
            W = np.outer(_GL3_W * hs, _GL3_W * hs).ravel() * frac * h * h
            pts.append(P)
            wts.append(W)
    if not pts:
        return np.zeros((16, 16))
    return _cell_stiffness_quad(c0, 2, h, np.concatenate(pts), np.concatenate(wts))


def disk_clamped_solve(c0: ConstantTensor, g: PotentialGrid, radius: float = 1.0,
                       center=(0.0, 0.0), gamma: float = 20.0,
                       spacing_cells: float = 0.5, sub: int = 4,
                       sliver_threshold: float = 1e-2) -> BvpSolution:
    """Clamped solve on the inscribed disk (n = 2) with circle data from g.

    The interior energy is assembled over the disk (straddling cells are
    integrated with subcell overlap weights) and the clamped conditions
    w = g, Dw = Dg on the circle are imposed by a symmetric consistent
    boundary formulation with penalty parameter `gamma`: the boundary
    moment/shear terms of the double-divergence operator are added so that
    the exact clamped-disk solution satisfies the discrete equations, and
    value/normal-slope mismatches are penalized at arc collocation points.
    Node clamping at staircase resolution is avoided entirely; it enforces
    the circle conditions only to O(sqrt(h)) and stalls near 1e-2 error.
    """
    if g.n != 2:
        raise ParameterError("the disk-clamped variant is implemented for n = 2")
    n, N, h = g.n, g.N, g.spacing
    center = np.asarray(center, dtype=float)
    if np.any(np.abs(center) + radius > 1.0 + 1e-12):
        raise DomainError("disk escapes the computational cube")
    if tensor_legendre_min(c0.c0) <= 0:
        raise EllipticityError("coefficient tensor is not Legendre-positive")

    cells, gid = _local_to_global(n, N)
    K_loc = _local_stiffness(c0.c0, n, h)
    cell_lo = -1.0 + h * cells
    far = np.maximum(np.abs(cell_lo - center), np.abs(cell_lo + h - center))
    near = np.clip(center, cell_lo, cell_lo + h) - center
    inside = (far**2).sum(axis=1) <= radius * radius
    outside = (near**2).sum(axis=1) >= radius * radius
    ndof = (N + 1) ** n * 2**n
    rows_l, cols_l, data_l = [], [], []
    node_w = np.zeros((N + 1) ** n)
    node_strides = np.array([(N + 1) ** (n - 1 - a) for a in range(n)])
    for idx in range(len(cells)):
        if outside[idx]:
            continue
        if inside[idx]:
            Kc, wgt = K_loc, 1.0
        else:
            wgt = _ball_cell_overlap(n, center, radius, cell_lo[idx],
                                     cell_lo[idx] + h) / h**n
            if wgt <= 1e-12:
                continue
            Kc = _straddle_stiffness(c0.c0, h, cell_lo[idx], center, radius, sub)
        gds = gid[idx]
        rows_l.append(np.repeat(gds, len(gds)))
        cols_l.append(np.tile(gds, len(gds)))
        data_l.append(Kc.ravel())
        for corner in itertools.product((0, 1), repeat=n):
            node_w[((cells[idx] + corner) * node_strides).sum()] += wgt
    K = sp.coo_matrix((np.concatenate(data_l),
                       (np.concatenate(rows_l), np.concatenate(cols_l))),
                      shape=(ndof, ndof)).tocsr()

    m_pts = int(np.ceil(2 * np.pi * radius / (spacing_cells * h)))
    th = 2 * np.pi * np.arange(m_pts) / m_pts
    nu = np.stack([np.cos(th), np.sin(th)], axis=1)
    pts = center + radius * nu
    ds = 2 * np.pi * radius / m_pts
    orders = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2),
              (3, 0), (2, 1), (1, 2), (0, 3)]
    R = _hermite_rows(n, N, pts, orders)
    Rv = R[(0, 0)]
    Rg = [R[(1, 0)], R[(0, 1)]]

    def partial_rows(*axes):
        o = [0, 0]
        for a in axes:
            o[a] += 1
        return R[tuple(o)]

    RM = []
    for j in range(n):
        acc = None
        for i, k, l in itertools.product(range(n), repeat=3):
            coeff = c0.c0[i, j, k, l]
            if coeff == 0.0:
                continue
            term = coeff * (sp.diags(nu[:, l]) @ partial_rows(i, k))
            acc = term if acc is None else acc + term
        RM.append(acc.tocsr())
    RT = None
    for i, j, k, l in itertools.product(range(n), repeat=4):
        coeff = c0.c0[i, j, k, l]
        if coeff == 0.0:
            continue
        term = coeff * (sp.diags(nu[:, j]) @ partial_rows(i, k, l))
        RT = term if RT is None else RT + term
    RT = RT.tocsr()
    Rgn = (sp.diags(nu[:, 0]) @ Rg[0] + sp.diags(nu[:, 1]) @ Rg[1]).tocsr()

    A = K.copy()
    for j in range(n):
        A = A - ds * (RM[j].T @ Rg[j] + Rg[j].T @ RM[j])
    A = A + ds * (RT.T @ Rv + Rv.T @ RT)
    A = A + (gamma / h) * ds * (Rgn.T @ Rgn) + (gamma / h**3) * ds * (Rv.T @ Rv)

    ghat = hermite_dofs(g).reshape(-1)
    gval = Rv @ ghat
    ggrad = [Rg[0] @ ghat, Rg[1] @ ghat]
    gn = nu[:, 0] * ggrad[0] + nu[:, 1] * ggrad[1]
    L = (-ds * (RM[0].T @ ggrad[0] + RM[1].T @ ggrad[1]) + ds * (RT.T @ gval)
         + (gamma / h) * ds * (Rgn.T @ gn) + (gamma / h**3) * ds * (Rv.T @ gval))

    freemask = node_w > sliver_threshold
    free = np.repeat(freemask, 2**n)
    pinned_vals = ghat * (~free)
    try:
        lu = spla.splu(A[free][:, free].tocsc())
    except RuntimeError as exc:
        raise AssemblyError(f"disk system could not be factorized: {exc}")
    rhs = (L - A @ pinned_vals)[free]
    wf = lu.solve(rhs)
    res = float(np.linalg.norm(A[free][:, free] @ wf - rhs)
                / max(np.linalg.norm(rhs), 1e-300))
    wd = pinned_vals.copy()
    wd[free] = wf
    v = wd - ghat
    energy = float(v @ (K @ v))
    w_vals = wd.reshape(g.values.shape + (2**n,))[..., 0]
    w = PotentialGrid(n=n, N=N, values=w_vals.copy(), description="disk bvp solution")
    return BvpSolution(w=w, energy=energy, iterations=0, residual=res,
                       method="disk-nitsche", free_count=int(free.sum()), dofs=wd)


# ---------------------------------------------------------------------------
# energy norms on nodal grids


def energy_norm(c0: ConstantTensor, v: PotentialGrid, region=None) -> float:
    """Quadrature of c0^{ij,kl} v_ik v_jl with the stencil Hessian pipeline.

    Sandwiched pointwise between the extreme Legendre eigenvalues of the
    tensor times |D^2 v|^2, hence as an integral as well.
    """
    quad = region_quadrature(v, region)
    H = hessian_field(v)
    M = np.moveaxis(quad.interp(H), -1, 0)
    vals = np.einsum("ijkl,mik,mjl->m", c0.c0, M, M)
    return float(quad.weights @ vals)


def hessian_sq_norm(v: PotentialGrid, region=None) -> float:
    """Quadrature of |D^2 v|^2 over the region (same pipeline as energy_norm)."""
    quad = region_quadrature(v, region)
    H = hessian_field(v)
    M = np.moveaxis(quad.interp(H), -1, 0)
    return float(quad.weights @ np.einsum("mik,mik->m", M, M))
