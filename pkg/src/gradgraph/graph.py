"""Discretized potentials and the geometry of their gradient graphs.

The computational domain is the cube [-1, 1]^n carrying a uniform node grid
with N cells per axis. First and second derivatives of nodal data use
centered second-order stencils (valid at nodes 1..N-1); the outermost node
ring is filled by replication and is consumed only by region quadrature near
the cube surface, never by residual evaluations, which restrict support away
from the two-node boundary band.

Region integrals use per-cell tensor Gauss-Legendre quadrature with 3 points
per axis. Cells straddling a ball boundary keep their Gauss points but have
their weights scaled by the exact (n <= 2) or subdivided (n = 3) overlap
fraction, so that constant integrands over balls are integrated exactly.
"""

from __future__ import annotations

import base64
import functools
import itertools
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegeneracyError, DomainError, ParameterError, StencilError
from .metric import MetricField, blocks_at

BAND = 2  # width of the fixed boundary node band

_GL_NODES = np.array([0.5 - np.sqrt(15.0) / 10.0, 0.5, 0.5 + np.sqrt(15.0) / 10.0])
_GL_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


# ---------------------------------------------------------------------------
# potential grids


@dataclass(frozen=True)
class PotentialGrid:
    """Scalar potential sampled at the nodes of the uniform cube grid."""

    n: int
    N: int
    values: np.ndarray
    description: str = ""

    def __post_init__(self):
        if self.N < 8:
            raise ParameterError(f"need at least 8 cells per axis, got {self.N}")
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if vals.shape != (self.N + 1,) * self.n:
            raise ParameterError(
                f"values shape {vals.shape} does not match (N+1)^n for "
                f"n={self.n}, N={self.N}"
            )
        if not np.all(np.isfinite(vals)):
            raise ParameterError("potential values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def spacing(self) -> float:
        return 2.0 / self.N

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.N + 1)

    def node_coords(self, node) -> np.ndarray:
        return -1.0 + self.spacing * np.asarray(node, dtype=float)

    def with_values(self, values, description: str | None = None) -> "PotentialGrid":
        return replace(self, values=np.asarray(values, dtype=float),
                       description=self.description if description is None else description)

    def add_scaled(self, other_nodal: np.ndarray, t: float) -> "PotentialGrid":
        return self.with_values(self.values + t * other_nodal)


def grid_from_callable(n: int, N: int, fn, description: str = "") -> PotentialGrid:
    axes = np.meshgrid(*([np.linspace(-1.0, 1.0, N + 1)] * n), indexing="ij")
    pts = np.stack([a.ravel() for a in axes], axis=1)
    vals = np.asarray(fn(pts), dtype=float).reshape((N + 1,) * n)
    return PotentialGrid(n=n, N=N, values=vals, description=description)


def zero_grid(n: int, N: int) -> PotentialGrid:
    return PotentialGrid(n=n, N=N, values=np.zeros((N + 1,) * n))


# ---------------------------------------------------------------------------
# stencils


def _d1(v: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(v)
    core = [slice(None)] * v.ndim
    plus = [slice(None)] * v.ndim
    minus = [slice(None)] * v.ndim
    core[axis] = slice(1, -1)
    plus[axis] = slice(2, None)
    minus[axis] = slice(None, -2)
    out[tuple(core)] = (v[tuple(plus)] - v[tuple(minus)]) / (2.0 * h)
    return out


def _d2(v: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(v)
    core = [slice(None)] * v.ndim
    plus = [slice(None)] * v.ndim
    minus = [slice(None)] * v.ndim
    core[axis] = slice(1, -1)
    plus[axis] = slice(2, None)
    minus[axis] = slice(None, -2)
    out[tuple(core)] = (v[tuple(plus)] - 2.0 * v[tuple(core)] + v[tuple(minus)]) / (h * h)
    return out


def _fill_ring(v: np.ndarray) -> np.ndarray:
    for axis in range(v.ndim):
        lo = [slice(None)] * v.ndim
        lo_src = [slice(None)] * v.ndim
        hi = [slice(None)] * v.ndim
        hi_src = [slice(None)] * v.ndim
        lo[axis], lo_src[axis] = 0, 1
        hi[axis], hi_src[axis] = -1, -2
        v[tuple(lo)] = v[tuple(lo_src)]
        v[tuple(hi)] = v[tuple(hi_src)]
    return v


def gradient_field(u: PotentialGrid) -> np.ndarray:
    """Centered nodal gradient, shape (n, *(N+1)^n); edge ring replicated."""
    h = u.spacing
    return np.stack([_fill_ring(_d1(u.values, a, h)) for a in range(u.n)])


def hessian_field(u: PotentialGrid) -> np.ndarray:
    """Centered nodal Hessian, shape (n, n, *(N+1)^n); edge ring replicated."""
    h = u.spacing
    n = u.n
    out = np.zeros((n, n) + u.values.shape)
    for a in range(n):
        out[a, a] = _fill_ring(_d2(u.values, a, h))
        for b in range(a + 1, n):
            mixed = _fill_ring(_d1(_d1(u.values, a, h), b, h))
            out[a, b] = mixed
            out[b, a] = mixed
    return out


def hessian(u: PotentialGrid, node) -> np.ndarray:
    """Centered-stencil Hessian at a single node; exact on quadratics."""
    node = tuple(int(i) for i in np.atleast_1d(node))
    if len(node) != u.n:
        raise ParameterError(f"node index must have {u.n} components")
    if any(i < 1 or i > u.N - 1 for i in node):
        raise StencilError(f"node {node} is too close to the cube boundary")
    h = u.spacing
    v = u.values
    n = u.n
    out = np.zeros((n, n))

    def at(offsets):
        return v[tuple(node[a] + offsets.get(a, 0) for a in range(n))]

    for a in range(n):
        out[a, a] = (at({a: 1}) - 2.0 * at({}) + at({a: -1})) / (h * h)
        for b in range(a + 1, n):
            val = (at({a: 1, b: 1}) - at({a: 1, b: -1})
                   - at({a: -1, b: 1}) + at({a: -1, b: -1})) / (4.0 * h * h)
            out[a, b] = out[b, a] = val
    return out


# ---------------------------------------------------------------------------
# regions and quadrature


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.radius <= 0:
            raise ParameterError("ball radius must be positive")


@dataclass(frozen=True)
class CubeRegion:
    half_width: float

    def __post_init__(self):
        if self.half_width <= 0:
            raise ParameterError("cube half-width must be positive")


@dataclass(frozen=True)
class Quadrature:
    """Quadrature points with multilinear interpolation stencils."""

    points: np.ndarray       # (m, n)
    weights: np.ndarray      # (m,)
    corner_flat: np.ndarray  # (m, 2^n) flat node indices
    corner_w: np.ndarray     # (m, 2^n)

    def interp(self, nodal: np.ndarray) -> np.ndarray:
        """Interpolate nodal data of shape (..., *(N+1)^n) to the points."""
        lead = nodal.shape[: nodal.ndim - self.points.shape[1]]
        flat = nodal.reshape(lead + (-1,))
        gathered = flat[..., self.corner_flat]
        return np.einsum("...mc,mc->...m", gathered, self.corner_w)


def _cell_points(grid_n: int):
    offs = np.array(list(itertools.product(_GL_NODES, repeat=grid_n)))
    wts = np.prod(np.array(list(itertools.product(_GL_WEIGHTS, repeat=grid_n))), axis=1)
    return offs, wts


def _corner_offsets(n: int):
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=int)


def _build_quadrature(n: int, N: int, cells: np.ndarray, cell_scale: np.ndarray) -> Quadrature:
    """Tensor GL3 points on the given cells; weights scaled per cell."""
    h = 2.0 / N
    offs, wts = _cell_points(n)
    q = len(offs)
    k = len(cells)
    t = (cells[:, None, :] + offs[None, :, :])  # (k, q, n) in cell units
    points = -1.0 + h * t.reshape(k * q, n)
    weights = (wts[None, :] * cell_scale[:, None]).reshape(k * q) * h**n

    corners = _corner_offsets(n)  # (2^n, n)
    base = np.repeat(cells, q, axis=0)  # (k*q, n)
    frac = np.tile(offs, (k, 1))        # (k*q, n)
    idx = base[:, None, :] + corners[None, :, :]           # (m, 2^n, n)
    w = np.where(corners[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    corner_w = np.prod(w, axis=2)
    strides = np.array([(N + 1) ** (n - 1 - a) for a in range(n)])
    corner_flat = (idx * strides).sum(axis=2)
    return Quadrature(points=points, weights=weights,
                      corner_flat=corner_flat, corner_w=corner_w)


def _enumerate_cells(lo, hi, n):
    ranges = [np.arange(lo[a], hi[a]) for a in range(n)]
    grids = np.meshgrid(*ranges, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


@functools.lru_cache(maxsize=64)
def _window_quadrature_cached(n: int, N: int, lo: tuple, hi: tuple) -> Quadrature:
    cells = _enumerate_cells(lo, hi, n)
    return _build_quadrature(n, N, cells, np.ones(len(cells)))


def window_quadrature(u: PotentialGrid, lo, hi) -> Quadrature:
    """Plain quadrature over the cell window lo..hi-1 per axis."""
    lo = tuple(int(a) for a in lo)
    hi = tuple(int(a) for a in hi)
    if any(a < 0 or b > u.N or a >= b for a, b in zip(lo, hi)):
        raise ParameterError(f"bad cell window {lo}..{hi}")
    return _window_quadrature_cached(u.n, u.N, lo, hi)


def valid_cell_window(u: PotentialGrid):
    """Cells whose interpolation touches only stencil-valid nodes."""
    return (1,) * u.n, (u.N - 1,) * u.n


def _interval_overlap(a, b, lo, hi):
    return np.maximum(0.0, np.minimum(b, hi) - np.maximum(a, lo))


def _circle_antideriv(x, r):
    x = np.clip(x, -r, r)
    return 0.5 * (x * np.sqrt(max(r * r - x * x, 0.0)) + r * r * np.arcsin(x / r))


def _circle_rect_area(r: float, x1: float, x2: float, y1: float, y2: float) -> float:
    """Area of the origin-centered disk of radius r inside [x1,x2] x [y1,y2]."""
    a, b = max(x1, -r), min(x2, r)
    if a >= b:
        return 0.0
    cuts = {a, b}
    for yy in (y1, y2):
        if abs(yy) < r:
            xc = np.sqrt(r * r - yy * yy)
            for c in (-xc, xc):
                if a < c < b:
                    cuts.add(c)
    cuts = sorted(cuts)
    area = 0.0
    for p, q in zip(cuts[:-1], cuts[1:]):
        xm = 0.5 * (p + q)
        s = np.sqrt(max(r * r - xm * xm, 0.0))
        top, bot = min(y2, s), max(y1, -s)
        if top <= bot:
            continue
        piece = 0.0
        if s < y2:
            piece += _circle_antideriv(q, r) - _circle_antideriv(p, r)
        else:
            piece += y2 * (q - p)
        if -s > y1:
            piece += _circle_antideriv(q, r) - _circle_antideriv(p, r)
        else:
            piece += -y1 * (q - p)
        area += piece
    return area


def _ball_box_overlap_3d(r: float, lo: np.ndarray, hi: np.ndarray, depth: int = 3) -> float:
    """Volume of the origin-centered ball inside the box, by recursive bisection."""
    boxes_lo = lo[None, :]
    boxes_hi = hi[None, :]
    vol = 0.0
    for level in range(depth):
        mid_far = np.maximum(np.abs(boxes_lo), np.abs(boxes_hi))
        far2 = (mid_far**2).sum(axis=1)
        near = np.clip(0.0, boxes_lo, boxes_hi)
        near2 = (near**2).sum(axis=1)
        inside = far2 <= r * r
        outside = near2 >= r * r
        vol += np.prod(boxes_hi[inside] - boxes_lo[inside], axis=1).sum()
        strad_lo = boxes_lo[~inside & ~outside]
        strad_hi = boxes_hi[~inside & ~outside]
        if len(strad_lo) == 0:
            return vol
        mid = 0.5 * (strad_lo + strad_hi)
        new_lo, new_hi = [], []
        for bits in itertools.product((0, 1), repeat=3):
            sel = np.array(bits, dtype=bool)
            new_lo.append(np.where(sel, mid, strad_lo))
            new_hi.append(np.where(sel, strad_hi, mid))
        boxes_lo = np.concatenate(new_lo)
        boxes_hi = np.concatenate(new_hi)
    # final level: half-volume attribution of the remaining straddlers
    vol += 0.5 * np.prod(boxes_hi - boxes_lo, axis=1).sum()
    return vol


def _ball_cell_overlap(n: int, center: np.ndarray, radius: float,
                       cell_lo: np.ndarray, cell_hi: np.ndarray) -> float:
    lo = cell_lo - center
    hi = cell_hi - center
    if n == 1:
        return float(_interval_overlap(lo[0], hi[0], -radius, radius))
    if n == 2:
        return _circle_rect_area(radius, lo[0], hi[0], lo[1], hi[1])
    if n == 3:
        return _ball_box_overlap_3d(radius, lo, hi)
    raise ParameterError(f"ball regions implemented for n <= 3, got n={n}")


@functools.lru_cache(maxsize=128)
def _ball_quadrature_cached(n: int, N: int, center: tuple, radius: float) -> Quadrature:
    h = 2.0 / N
    c = np.asarray(center)
    lo_cell = np.maximum(np.floor((c - radius + 1.0) / h).astype(int), 0)
    hi_cell = np.minimum(np.ceil((c + radius + 1.0) / h).astype(int), N)
    cells = _enumerate_cells(lo_cell, hi_cell, n)
    cell_lo = -1.0 + h * cells
    cell_hi = cell_lo + h
    far = np.maximum(np.abs(cell_lo - c), np.abs(cell_hi - c))
    near = np.clip(c, cell_lo, cell_hi) - c
    inside = (far**2).sum(axis=1) <= radius * radius
    outside = (near**2).sum(axis=1) >= radius * radius
    straddle = ~inside & ~outside
    scale = np.zeros(len(cells))
    scale[inside] = 1.0
    cellvol = h**n
    for i in np.nonzero(straddle)[0]:
        scale[i] = _ball_cell_overlap(n, c, radius, cell_lo[i], cell_hi[i]) / cellvol
    keep = scale > 0.0
    return _build_quadrature(n, N, cells[keep], scale[keep])


def region_quadrature(u: PotentialGrid, region=None) -> Quadrature:
    """Quadrature for a Ball, a CubeRegion, or (None) the full valid cube.

    Balls may extend to the inscribed ball of the cube (their outer cells use
    the replicated stencil ring); cube regions are snapped to whole cells and
    respect the boundary band.
    """
    if region is None:
        lo, hi = valid_cell_window(u)
        return window_quadrature(u, lo, hi)
    if isinstance(region, CubeRegion):
        if region.half_width > 1.0 + 1e-12:
            raise DomainError("cube region exceeds the computational domain")
        h = u.spacing
        lo = int(np.ceil((1.0 - region.half_width) / h - 1e-9))
        lo = max(lo, 1)
        hi = u.N - lo
        if hi <= lo:
            raise DomainError("cube region too small for the grid")
        return window_quadrature(u, (lo,) * u.n, (hi,) * u.n)
    if isinstance(region, Ball):
        c = np.asarray(region.center, dtype=float)
        if len(c) != u.n:
            raise ParameterError("ball center dimension mismatch")
        if np.any(np.abs(c) + region.radius > 1.0 + 1e-12):
            raise DomainError("ball region escapes the computational cube")
        return _ball_quadrature_cached(u.n, u.N, tuple(c), float(region.radius))
    raise ParameterError(f"unknown region {region!r}")


# ---------------------------------------------------------------------------
# induced metric and volume


@dataclass(frozen=True)
class InducedMetricPoint:
    g: np.ndarray
    sqrt_det_g: float
    g_inv: np.ndarray


def induced_metric_many(m: MetricField, X: np.ndarray, Du: np.ndarray,
                        D2u: np.ndarray, check: bool = True):
    """Induced metric g on the gradient graph at batched points.

    Returns (g, sqrt_det_g, g_inv) with shapes (k, n, n), (k,), (k, n, n).
    """
    n = m.n
    M = D2u
    eye = np.eye(n)
    if m.is_flat:
        g = eye + M @ M
    else:
        A, B, C = blocks_at(m, X, Du, check=check)
        MC = M @ C
        g = eye + M @ M + A + M @ B @ M + MC + np.swapaxes(MC, -1, -2)
    g = 0.5 * (g + np.swapaxes(g, -1, -2))
    try:
        chol = np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise DegeneracyError("induced metric degenerate: graph too steep for the metric")
    sqrt_det = np.prod(np.diagonal(chol, axis1=-2, axis2=-1), axis=-1)
    g_inv = np.linalg.inv(g)
    return g, sqrt_det, g_inv


def induced_metric(m: MetricField, Du, D2u, x) -> InducedMetricPoint:
    """Induced metric at a single point of the graph."""
    Du = np.asarray(Du, dtype=float)[None, :]
    D2u = np.asarray(D2u, dtype=float)[None, :, :]
    x = np.asarray(x, dtype=float)[None, :]
    g, s, gi = induced_metric_many(m, x, Du, D2u, check=True)
    return InducedMetricPoint(g=g[0], sqrt_det_g=float(s[0]), g_inv=gi[0])


def graph_fields(u: PotentialGrid):
    """Nodal (Du, D2u) stencil fields for the potential."""
    return gradient_field(u), hessian_field(u)


def volume(u: PotentialGrid, m: MetricField, region=None,
           fields=None, quad: Quadrature | None = None) -> float:
    """Volume of the gradient graph over the region, measured in the metric.

    `fields` and `quad` allow callers in hot loops to reuse the nodal stencil
    fields and the quadrature structure.
    """
    if quad is None:
        quad = region_quadrature(u, region)
    if fields is None:
        fields = graph_fields(u)
    Du_f, D2u_f = fields
    Du = quad.interp(Du_f).T                      # (mq, n)
    D2u = np.moveaxis(quad.interp(D2u_f), -1, 0)  # (mq, n, n)
    _, sqrt_det, _ = induced_metric_many(m, quad.points, Du, D2u, check=True)
    return float(quad.weights @ sqrt_det)


# ---------------------------------------------------------------------------
# rescaling


_KEYS_A = -0.5


def _keys_weights(s: np.ndarray) -> np.ndarray:
    """Cubic convolution weights (Keys, a = -1/2) for fractions s in [0, 1].

    Returns shape (len(s), 4) for samples at offsets (-1, 0, 1, 2); exact on
    quadratics, O(h^3) on smooth data.
    """
    s2 = s * s
    s3 = s2 * s
    w = np.empty((len(s), 4))
    w[:, 0] = -0.5 * s3 + s2 - 0.5 * s
    w[:, 1] = 1.5 * s3 - 2.5 * s2 + 1.0
    w[:, 2] = -1.5 * s3 + 2.0 * s2 + 0.5 * s
    w[:, 3] = 0.5 * s3 - 0.5 * s2
    return w


def _resample_axis(values: np.ndarray, axis: int, targets: np.ndarray, N: int) -> np.ndarray:
    h = 2.0 / N
    t = (targets + 1.0) / h
    i = np.clip(np.floor(t).astype(int), 1, N - 2)
    s = t - i
    w = _keys_weights(s)
    moved = np.moveaxis(values, axis, -1)
    out = np.zeros(moved.shape[:-1] + (len(targets),))
    for k in range(4):
        out += w[:, k] * moved[..., i + (k - 1)]
    return np.moveaxis(out, -1, axis)


def rescale_potential(u: PotentialGrid, x0, r: float) -> PotentialGrid:
    """The rescaled potential v(y) = u(x0 + r y) / r^2 on the same node grid.

    Hessians are invariant: D^2 v(y) = D^2 u(x0 + r y). Node values are
    resampled by separable cubic (Keys) interpolation when the sample lattice
    does not align with the grid.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (u.n,):
        raise ParameterError(f"x0 must have shape ({u.n},)")
    if r <= 0:
        raise ParameterError("rescaling factor must be positive")
    h = u.spacing
    axis = u.axis
    vals = u.values
    if np.allclose(x0, 0.0) and abs(r - 1.0) < 1e-15:
        return u
    for a in range(u.n):
        targets = x0[a] + r * axis
        if targets.min() < -1.0 + h - 1e-12 or targets.max() > 1.0 - h + 1e-12:
            raise DomainError(
                "rescaled sample cube leaves the original domain "
                "(needs a one-cell interpolation margin)"
            )
        vals = _resample_axis(vals, a, targets, u.N)
    return PotentialGrid(n=u.n, N=u.N, values=vals / (r * r),
                         description=u.description)


# ---------------------------------------------------------------------------
# grid file I/O


def save_grid(u: PotentialGrid, path, encoding: str = "base64"):
    """Write the grid file: JSON header plus row-major node values."""
    if encoding == "base64":
        payload = base64.b64encode(
            np.ascontiguousarray(u.values, dtype="<f8").tobytes()).decode("ascii")
    elif encoding == "plain":
        payload = u.values.ravel().tolist()
    else:
        raise ParameterError(f"unknown grid encoding {encoding!r}")
    doc = {"n": u.n, "N": u.N, "description": u.description,
           "encoding": encoding, "values": payload}
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_grid(path) -> PotentialGrid:
    with open(path) as fh:
        doc = json.load(fh)
    n, N = int(doc["n"]), int(doc["N"])
    enc = doc.get("encoding", "plain")
    if enc == "base64":
        raw = np.frombuffer(base64.b64decode(doc["values"]), dtype="<f8")
    elif enc == "plain":
        raw = np.asarray(doc["values"], dtype=float)
    else:
        raise ParameterError(f"unknown grid encoding {enc!r}")
    if raw.size != (N + 1) ** n:
        raise ParameterError("grid payload size does not match header")
    return PotentialGrid(n=n, N=N, values=raw.reshape((N + 1,) * n).copy(),
                         description=doc.get("description", ""))
