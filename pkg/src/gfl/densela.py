"""Dense linear-algebra kernels and exact matrix-function oracles.

Everything here works on small dense symmetric matrices through a full
eigendecomposition. These are the reference values the transformer outputs
are checked against, not the thing under test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NULL_TOL = 1e-10


class LinAlgError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    def nonzero_mask(self, tol: float = NULL_TOL) -> np.ndarray:
        scale = max(abs(self.eigenvalues[0]), abs(self.eigenvalues[-1]))
        return self.eigenvalues > tol * scale

    def apply(self, fn, tol: float = NULL_TOL) -> np.ndarray:
        """U f(S) U^T with f applied on the nonzero spectrum and 0 elsewhere."""
        mask = self.nonzero_mask(tol)
        vals = np.zeros_like(self.eigenvalues)
        vals[mask] = fn(self.eigenvalues[mask])
        U = self.eigenvectors
        return (U * vals) @ U.T


@dataclass(frozen=True)
class TargetMatrix:
    kind: str
    entries: np.ndarray
    params: dict = field(default_factory=dict)


def _check_symmetric(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise LinAlgError(f"expected a square matrix, got shape {A.shape}")
    scale = np.linalg.norm(A, 2) if A.size else 0.0
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-10 * max(scale, 1e-300):
        raise LinAlgError("matrix is not symmetric")
    return A


def jacobi_eig(A: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> SpectralDecomposition:
    """Cyclic Jacobi eigensolver for a symmetric matrix.

    Sweeps until the off-diagonal Frobenius norm drops below
    ``tol * ||A||_F``.
    """
    A = _check_symmetric(A).copy()
    n = A.shape[0]
    V = np.eye(n)
    target = tol * np.linalg.norm(A)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 1.0 / (2.0 * theta)
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise LinAlgError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    w = np.diag(A)
    order = np.argsort(w, kind="stable")
    return SpectralDecomposition(w[order], V[:, order])


def sym_eig(A: np.ndarray, method: str = "lapack") -> SpectralDecomposition:
    """Ascending eigendecomposition of a symmetric matrix.

    ``method="lapack"`` uses ``numpy.linalg.eigh``; ``method="jacobi"`` runs the
    in-house cyclic Jacobi sweep. Both return the same contract.
    """
    if method == "jacobi":
        return jacobi_eig(A)
    if method != "lapack":
        raise ValueError(f"unknown eigensolver {method!r}")
    A = _check_symmetric(A)
    w, U = np.linalg.eigh((A + A.T) / 2)
    return SpectralDecomposition(w, U)


def _decompose(L) -> SpectralDecomposition:
    if isinstance(L, SpectralDecomposition):
        return L
    return sym_eig(L)


def pinv_psd(L, tol: float = NULL_TOL) -> np.ndarray:
    eig = _decompose(L)
    if not np.any(eig.nonzero_mask(tol)):
        raise LinAlgError("pseudo-inverse of the zero matrix")
    return eig.apply(lambda lam: 1.0 / lam, tol)


def sqrt_pinv(L, tol: float = NULL_TOL) -> np.ndarray:
    """Principal square root of the pseudo-inverse, U S^{-1/2} U^T."""
    eig = _decompose(L)
    if not np.any(eig.nonzero_mask(tol)):
        raise LinAlgError("pseudo-inverse of the zero matrix")
    return eig.apply(lambda lam: 1.0 / np.sqrt(lam), tol)


def heat_kernel(L, s: float, deflate: bool = False) -> np.ndarray:
    """exp(-s L); with ``deflate`` the constant-vector component 11^T/n is removed."""
    if s <= 0:
        raise ValueError(f"temperature must be positive, got {s}")
    eig = _decompose(L)
    U = eig.eigenvectors
    H = (U * np.exp(-s * eig.eigenvalues)) @ U.T
    if deflate:
        n = H.shape[0]
        H = H - np.full((n, n), 1.0 / n)
    return H


def effective_resistance(Ldag: np.ndarray) -> np.ndarray:
    """R = 1 l^T + l 1^T - 2 L^+ with l = diag(L^+)."""
    ell = np.diag(Ldag)
    R = ell[None, :] + ell[:, None] - 2.0 * Ldag
    np.fill_diagonal(R, 0.0)
    return R


def top_k_eigvecs(L, k: int) -> np.ndarray:
    """Eigenvectors of the k largest eigenvalues, in ascending eigenvalue order."""
    eig = _decompose(L)
    return eig.eigenvectors[:, eig.eigenvalues.size - k:]


def bottom_k_eigvecs(L, k: int) -> np.ndarray:
    eig = _decompose(L)
    return eig.eigenvectors[:, :k]


def qr_ortho(A: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """Q factor of A by modified Gram-Schmidt with one re-orthogonalisation pass.

    Columns keep their order and R has a positive diagonal.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise LinAlgError(f"expected a 2-D matrix, got shape {A.shape}")
    n, k = A.shape
    if k > n:
        raise LinAlgError(f"cannot orthonormalise {k} columns in R^{n}")
    sv = np.linalg.svd(A, compute_uv=False)
    if sv.size == 0 or sv[-1] <= rank_tol * sv[0]:
        raise LinAlgError("matrix is rank deficient")
    Q = A.copy()
    for j in range(k):
        for _pass in range(2):
            for i in range(j):
                Q[:, j] -= (Q[:, i] @ Q[:, j]) * Q[:, i]
        Q[:, j] /= np.linalg.norm(Q[:, j])
    return Q


def subspace_iteration_ref(L: np.ndarray, Phi0: np.ndarray, iters: int) -> np.ndarray:
    """Block power method: ``iters`` rounds of Phi <- QR(L Phi)."""
    Phi = np.asarray(Phi0, dtype=float)
    for _ in range(iters):
        Phi = qr_ortho(L @ Phi)
    return Phi


def subspace_projector(Phi: np.ndarray) -> np.ndarray:
    """Orthogonal projector onto span(Phi)."""
    Q = qr_ortho(Phi)
    return Q @ Q.T


def operator_norm(E: np.ndarray) -> float:
    """Spectral norm, sqrt of the top eigenvalue of E^T E."""
    E = np.asarray(E, dtype=float)
    G = E.T @ E
    return float(np.sqrt(max(sym_eig((G + G.T) / 2).eigenvalues[-1], 0.0)))
