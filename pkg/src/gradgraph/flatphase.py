"""Flat-metric oracle: the arctan-eigenvalue phase and its weak pairing.

Cross-validates the general Euler-Lagrange assembly: on flat background the
weak volume residual is proportional to the pairing of the phase gradient
with the test-function gradient in the induced metric, with one global
constant calibrated empirically and frozen by the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .graph import PotentialGrid, hessian_field, window_quadrature, _d1, _fill_ring
from .variation import eta_fields, _support_window, TestFunction


def jacobi_eigenvalues(M: np.ndarray, tol: float = 1e-13,
                       max_sweeps: int = 30) -> np.ndarray:
    """Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ParameterError(f"expected a square matrix, got shape {M.shape}")
    if np.abs(M - M.T).max() > 1e-10 * (1.0 + np.abs(M).max()):
        raise ParameterError("matrix is not symmetric")
    A = 0.5 * (M + M.T)
    n = A.shape[0]
    if n == 1:
        return A.diagonal().copy()
    for _ in range(max_sweeps):
        off = np.abs(A - np.diag(np.diag(A))).max()
        if off <= tol * (1.0 + np.abs(np.diag(A)).max()):
            break
        for p in range(n):
            for q in range(p + 1, n):
                if abs(A[p, q]) <= 1e-300:
                    continue
                phi = 0.5 * np.arctan2(2.0 * A[p, q], A[q, q] - A[p, p])
                c, s = np.cos(phi), np.sin(phi)
                R = np.eye(n)
                R[p, p] = R[q, q] = c
                R[p, q] = s
                R[q, p] = -s
                A = R.T @ A @ R
                A = 0.5 * (A + A.T)
    return np.sort(np.diag(A))


def phase(D2u: np.ndarray) -> float:
    """Lagrangian phase: sum of arctangents of the Hessian eigenvalues."""
    return float(np.arctan(jacobi_eigenvalues(D2u)).sum())


def _eig2_batched(Hxx, Hyy, Hxy):
    # single cyclic-Jacobi rotation, exact for 2 x 2 symmetric matrices
    phi = 0.5 * np.arctan2(2.0 * Hxy, Hyy - Hxx)
    c, s = np.cos(phi), np.sin(phi)
    l1 = c * c * Hxx - 2.0 * s * c * Hxy + s * s * Hyy
    l2 = s * s * Hxx + 2.0 * s * c * Hxy + c * c * Hyy
    return l1, l2


@dataclass(frozen=True)
class PhaseField:
    theta: np.ndarray
    eigenvalue_cache: np.ndarray  # (..., n)


def phase_field(u: PotentialGrid) -> PhaseField:
    """Node-wise phase of the Hessian field (stencil ring replicated)."""
    H = hessian_field(u)
    n = u.n
    if n == 1:
        lam = H[0, 0][..., None]
    elif n == 2:
        l1, l2 = _eig2_batched(H[0, 0], H[1, 1], H[0, 1])
        lam = np.stack([l1, l2], axis=-1)
    else:
        shape = u.values.shape
        lam = np.zeros(shape + (n,))
        for idx in np.ndindex(shape):
            lam[idx] = jacobi_eigenvalues(H[(slice(None), slice(None)) + idx])
    theta = np.arctan(lam).sum(axis=-1)
    return PhaseField(theta=theta, eigenvalue_cache=lam)


def phase_pairing(u: PotentialGrid, eta: TestFunction) -> float:
    """Weak pairing of the phase gradient with the bump gradient.

    Computes the quadrature of sqrt(g) g^{ij} theta_i eta_j over the bump
    support on the flat-metric graph, with theta differentiated by centered
    differences of the node-wise phase.
    """
    # one extra margin ring: the phase gradient costs one stencil application
    lo, hi = _support_window(u, eta, extra_margin=1)
    quad = window_quadrature(u, lo, hi)
    h = u.spacing
    theta = phase_field(u).theta
    dtheta = np.stack([_fill_ring(_d1(theta, a, h)) for a in range(u.n)])
    H = hessian_field(u)
    M = np.moveaxis(quad.interp(H), -1, 0)
    g = np.eye(u.n) + M @ M
    chol = np.linalg.cholesky(g)
    sqrt_det = np.prod(np.diagonal(chol, axis1=-2, axis2=-1), axis=-1)
    g_inv = np.linalg.inv(g)
    _, eta1, _ = eta_fields(u, eta)
    ti = quad.interp(dtheta).T
    ei = quad.interp(eta1).T
    integrand = sqrt_det * np.einsum("mij,mi,mj->m", g_inv, ti, ei)
    return float(quad.weights @ integrand)
