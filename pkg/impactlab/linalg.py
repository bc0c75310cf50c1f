"""Dense SVD of real square matrices by one-sided Jacobi rotations.

Columns of a working copy of M are orthogonalized pairwise (Hestenes'
method) until every pair is orthogonal to the relative tolerance. Each
sweep visits all column pairs in a fixed round-robin tournament order, so a
step rotates n/2 disjoint pairs at once and the sequence of floating point
operations is fully determined by the input.

Output convention: singular values descending (ties keep the original
column order), and the largest-magnitude entry of each left singular
vector positive.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .constants import JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE
from .exceptions import ConvergenceError, DomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SvdResult:
    """M = U diag(S) Vᵀ.

    Attributes:
        u: Orthogonal matrix, columns are the left singular vectors.
        s: Singular values, non-negative and descending.
        v: Orthogonal matrix, columns are the right singular vectors.
        metadata: Provenance such as the number of imputed entries.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.s)


def _tournament(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Round-robin schedule covering every column pair once per sweep."""
    players = list(range(n + (n % 2)))
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        p = [players[k] for k in range(m // 2)]
        q = [players[m - 1 - k] for k in range(m // 2)]
        kept = [(a, b) for a, b in zip(p, q) if a < n and b < n]
        if kept:
            lo = np.array([min(a, b) for a, b in kept])
            hi = np.array([max(a, b) for a, b in kept])
            rounds.append((lo, hi))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def _complete_basis(known: np.ndarray, n: int) -> np.ndarray:
    """Orthonormal columns spanning the complement of `known`'s columns."""
    r = known.shape[1]
    q, _ = np.linalg.qr(np.hstack([known, np.eye(n)]))
    return q[:, r:n]


def svd(matrix) -> SvdResult:
    """Singular value decomposition by one-sided Jacobi.

    Args:
        matrix: Real N×N matrix with finite entries.

    Returns:
        The decomposition with the ordering and sign convention above.

    Raises:
        DomainError: If the matrix is not square or has non-finite entries.
        ConvergenceError: If the sweep cap is reached.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries; impute missing values first")
    n = a.shape[1]
    if n == 0:
        empty = np.zeros((0, 0))
        return SvdResult(empty, np.zeros(0), empty)

    eps = np.finfo(np.float64).eps
    threshold = max(JACOBI_TOLERANCE, n * eps)
    tiny = np.finfo(np.float64).tiny
    work = a.copy()
    v = np.eye(n)
    schedule = _tournament(n)

    for sweep in range(1, JACOBI_MAX_SWEEPS + 1):
        rotated = 0
        for p, q in schedule:
            ap = work[:, p]
            aq = work[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            scale = np.sqrt(alpha * beta)
            active = (scale > tiny) & (np.abs(gamma) > threshold * scale)
            if not np.any(active):
                continue
            rotated += int(np.count_nonzero(active))
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for target in (work, v):
                col_p = target[:, p].copy()
                col_q = target[:, q]
                target[:, p] = c * col_p - s * col_q
                target[:, q] = s * col_p + c * col_q
        if rotated == 0:
            logger.debug("Jacobi SVD n=%d converged after %d sweeps", n, sweep)
            break
    else:
        raise ConvergenceError(
            f"one-sided Jacobi did not converge within {JACOBI_MAX_SWEEPS} sweeps"
        )

    sigma = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]

    cutoff = sigma[0] * n * eps if sigma[0] > 0 else 0.0
    rank = int(np.count_nonzero(sigma > cutoff)) if sigma[0] > 0 else 0
    u = np.empty((n, n))
    u[:, :rank] = work[:, :rank] / sigma[:rank]
    if rank < n:
        u[:, rank:] = _complete_basis(u[:, :rank], n)

    pivots = np.argmax(np.abs(u), axis=0)
    flips = np.where(u[pivots, np.arange(n)] < 0, -1.0, 1.0)
    u *= flips
    v *= flips
    return SvdResult(u, sigma, v)


def reconstruct(decomposition: SvdResult) -> np.ndarray:
    """Returns U diag(S) Vᵀ."""
    return (decomposition.u * decomposition.s) @ decomposition.v.T


def impute_missing(values: np.ndarray) -> tuple[np.ndarray, int]:
    """Replaces missing (NaN) response entries by 0.

    Returns:
        The imputed copy and the number of imputed entries.
    """
    missing = np.isnan(values)
    return np.where(missing, 0.0, values), int(missing.sum())


def decompose(values: np.ndarray) -> SvdResult:
    """Imputes missing entries and decomposes, recording the imputation count."""
    filled, imputed = impute_missing(values)
    result = svd(filled)
    return SvdResult(result.u, result.s, result.v, {"imputed": imputed})
