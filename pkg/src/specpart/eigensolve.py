"""Smallest eigenpairs of sparse symmetric (generalized) problems.

The penalized formulation only ever needs the first eigenpair of a symmetric
positive definite matrix, possibly against a mass matrix. Inverse power
iteration with a direct sparse factorization is simple, deterministic, and
converges geometrically with ratio lambda_1/lambda_2, which is comfortably
below 1 for penalized cell problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh, splu

from .neighborhood import restrict_operator


class EigensolveError(RuntimeError):
    """Solver failure; carries the best residual reached."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass
class EigResult:
    """First eigenpair with its relative residual and iteration count.

    `residual` is ||A u - lambda B u|| / (lambda ||u||) with B the identity
    or the mass matrix.
    """

    value: float
    vector: np.ndarray
    residual: float
    iterations: int


def _default_max_iter(n):
    return int(10 * np.sqrt(n)) + 100


def _fix_sign(u):
    i = np.argmax(np.abs(u))
    return -u if u[i] < 0 else u


def _inverse_power(A, M, tol, max_iter):
    n = A.shape[0]
    if max_iter is None:
        max_iter = _default_max_iter(n)
    A = sp.csr_matrix(A)
    try:
        lu = splu(A.tocsc())
    except RuntimeError as exc:
        raise EigensolveError(f"factorization failed: {exc}") from exc

    def bdot(x, y):
        return float(x @ y) if M is None else float(x @ (M @ y))

    eye = sp.identity(n, format="csc")
    x = np.ones(n)
    x /= np.sqrt(bdot(x, x))
    best = np.inf
    lam = np.nan
    last_refactor = 0
    for it in range(1, max_iter + 1):
        rhs = x if M is None else M @ x
        y = lu.solve(rhs)
        ynorm = np.sqrt(bdot(y, y))
        if not np.isfinite(ynorm) or ynorm == 0:
            raise EigensolveError("inverse iteration broke down", residual=best)
        x = y / ynorm
        Ax = A @ x
        lam = float(x @ Ax) / bdot(x, x)
        if M is not None and bdot(x, x) <= 0:
            raise EigensolveError("mass matrix is not positive definite")
        r = Ax - lam * (x if M is None else M @ x)
        res = np.linalg.norm(r) / (abs(lam) * np.linalg.norm(x))
        best = min(best, res)
        if res <= tol:
            return EigResult(value=lam, vector=_fix_sign(x),
                             residual=res, iterations=it)
        # once the Rayleigh quotient is a good estimate, shift-invert close
        # below it; each refactorization shrinks the convergence ratio to
        # roughly res * lam / gap, so one or two suffice
        if res < 1e-3 and it - last_refactor >= 4:
            sigma = lam - 2.0 * res * abs(lam)
            B = eye if M is None else sp.csc_matrix(M)
            try:
                lu = splu((A - sigma * B).tocsc())
                last_refactor = it
            except RuntimeError:
                pass  # keep the previous factorization
    raise EigensolveError(
        f"no convergence after {max_iter} iterations "
        f"(best residual {best:.3e})", residual=best)


def smallest_eigpair(A, tol=1e-8, max_iter=None):
    """Smallest eigenpair of a symmetric positive definite sparse matrix."""
    return _inverse_power(A, None, tol, max_iter)


def smallest_eigpair_generalized(A, M, tol=1e-8, max_iter=None):
    """Smallest eigenpair of A u = lambda M u, M symmetric positive definite."""
    M = sp.csr_matrix(M)
    if (M.diagonal() <= 0).any():
        raise EigensolveError("mass matrix is not positive definite")
    return _inverse_power(A, M, tol, max_iter)


def smallest_eigvals_generalized(A, M, k, sigma_scale=1e-3):
    """k smallest eigenvalues of A u = lambda M u (A may be singular).

    Shift-invert Lanczos with a small negative shift, so a zero eigenvalue
    (constants in the kernel of a stiffness matrix) is handled cleanly.
    """
    A = sp.csr_matrix(A)
    M = sp.csr_matrix(M)
    scale = A.diagonal().sum() / max(M.diagonal().sum(), 1e-300)
    sigma = -sigma_scale * max(scale, 1e-12)
    # degenerate clusters (sphere harmonics) need a roomy Lanczos subspace;
    # the iteration cap keeps garbage geometry from hanging ARPACK
    ncv = min(A.shape[0], max(4 * k + 1, 40))
    try:
        vals = eigsh(A, k=k, M=M, sigma=sigma, which="LM",
                     return_eigenvectors=False, mode="normal",
                     ncv=ncv, maxiter=1000)
    except ArpackNoConvergence as exc:
        raise EigensolveError(
            f"generalized eigensolve did not converge for k={k} "
            f"(degenerate or disconnected geometry?)") from exc
    return np.sort(vals)


def penalized_operator(base_op, phi_local, C, mass_op=None):
    """Restricted penalized matrix: A + C diag(1-phi) (grid) or, on a
    surface, A + C diag((1-phi) m) with m the lumped mass (row sums of M).
    Lumping keeps the penalty diagonal and positive, which avoids the
    spurious low modes a non-diagonal penalty can introduce at coarse mesh
    resolution."""
    if mass_op is None:
        return sp.csr_matrix(base_op + C * sp.diags(1.0 - phi_local))
    lumped = np.asarray(mass_op.sum(axis=1)).ravel()
    return sp.csr_matrix(base_op + C * sp.diags((1.0 - phi_local) * lumped))


def penalized_eigenvalue(base_op, phi, C, nb, mass_op=None, node_weight=None,
                         tol=1e-8, max_iter=None):
    """First eigenpair of the penalized problem restricted to a neighborhood.

    Parameters
    ----------
    base_op : sparse matrix
        Full-grid Laplacian L or surface stiffness K.
    phi : ndarray
        Density on all nodes, in [0, 1], zero on masked-out nodes.
    C : float
        Penalization constant.
    nb : Neighborhood
        Computational neighborhood R of the cell.
    mass_op : sparse matrix, optional
        Full mass matrix M for the surface generalized problem.
    node_weight : float or ndarray, optional
        Quadrature weight (h^dim on grids) used to normalize the grid
        eigenvector so that sum(w * u^2) = 1; the surface eigenvector is
        M-normalized instead.

    Returns the eigenvector zero-extended to the full node set.
    """
    if nb.size == 0:
        raise EigensolveError("empty computational neighborhood")
    phi = np.asarray(phi, dtype=float)
    phi_local = phi[nb.indices]
    A_r = restrict_operator(base_op, nb)
    if mass_op is None:
        A = penalized_operator(A_r, phi_local, C)
        result = smallest_eigpair(A, tol=tol, max_iter=max_iter)
        u = result.vector
        w = 1.0 if node_weight is None else node_weight
        u = u / np.sqrt(np.sum(w * u**2))
    else:
        M_r = restrict_operator(mass_op, nb)
        A = penalized_operator(A_r, phi_local, C, mass_op=M_r)
        result = smallest_eigpair_generalized(A, M_r, tol=tol,
                                              max_iter=max_iter)
        u = result.vector
        u = u / np.sqrt(float(u @ (M_r @ u)))
    full = np.zeros(len(phi))
    full[nb.indices] = _fix_sign(u)
    result.vector = full
    return result
