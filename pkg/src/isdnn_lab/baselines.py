"""Classical estimators in the composite (real) domain, plus NMSE metrics.

Inputs are complex pilot blocks ``X (..., Np, Nt)`` and received blocks
``Y (..., Np, Nr)``.  Both are lifted to channelspace form, so the Gram
matrix ``G = X^T X`` is the ``(2Nt, 2Nt)`` composite of ``X^H X`` and every
estimate comes back as a ``(..., 2Nt, 2Nr)`` composite matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .composite import compose_channelspace
from .errors import ConfigError, DimensionError, EstimationError, MetricError, NumericError

COND_LIMIT = 1e12
DIVERGENCE_LIMIT = 1e12
MIN_CHUNKS = 100


@dataclass
class LsWorkspace:
    """Data-derived terms shared by every estimator: ``G``, ``q`` and ``diag(G)``."""

    G: np.ndarray
    q: np.ndarray
    D: np.ndarray

    @classmethod
    def from_blocks(cls, X: np.ndarray, Y: np.ndarray) -> "LsWorkspace":
        X = np.asarray(X)
        Y = np.asarray(Y)
        if X.shape[:-1] != Y.shape[:-1]:
            raise DimensionError(f"X {X.shape} and Y {Y.shape} disagree on pilot length / batch")
        Xc = compose_channelspace(X)
        Yc = compose_channelspace(Y)
        Xt = np.swapaxes(Xc, -1, -2)
        G = Xt @ Xc
        q = Xt @ Yc
        D = np.diagonal(G, axis1=-2, axis2=-1).copy()
        return cls(G=G, q=q, D=D)

    @property
    def d_inv(self) -> np.ndarray:
        """``1 / diag(G)`` shaped ``(..., 2Nt, 1)`` for row scaling."""
        if np.any(self.D <= 0):
            raise EstimationError("pilot Gram matrix has a zero diagonal entry")
        return (1.0 / self.D)[..., None]


def _workspace(X, Y) -> LsWorkspace:
    return X if isinstance(X, LsWorkspace) else LsWorkspace.from_blocks(X, Y)


def ls_estimate(X, Y=None) -> np.ndarray:
    """Least squares ``G^-1 q`` via a direct solve.

    Raises :class:`EstimationError` when any Gram matrix has condition number
    above 1e12.
    """
    ws = _workspace(X, Y)
    cond = np.linalg.cond(ws.G)
    worst = float(np.max(cond))
    if not np.isfinite(worst) or worst > COND_LIMIT:
        raise EstimationError(f"pilot Gram matrix ill-conditioned (condition number {worst:.3g})")
    return np.linalg.solve(ws.G, ws.q)


def diag_init(X, Y=None) -> np.ndarray:
    """Diagonally preconditioned estimate ``diag(G)^-1 q``."""
    ws = _workspace(X, Y)
    return ws.d_inv * ws.q


def mmse_estimate(X, Y=None, sigma2=0.0) -> np.ndarray:
    """Linear MMSE under a unit-variance i.i.d. channel prior: ``(G + sigma2 I)^-1 q``.

    ``sigma2`` may be a scalar or one value per batch element.
    """
    ws = _workspace(X, Y)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 < 0):
        raise ConfigError("noise variance must be non-negative")
    eye = np.eye(ws.G.shape[-1])
    return np.linalg.solve(ws.G + sigma2[..., None, None] * eye, ws.q)


def pgd_estimate(X, Y=None, step=None, iterations: int = 100, H0=None) -> np.ndarray:
    """Plain gradient descent on ``||Y - X H||^2`` with identity projection.

    ``H <- H + step * (q - G H)``.  ``step`` defaults to ``1 / lambda_max(G)``
    per batch element.
    """
    ws = _workspace(X, Y)
    if step is None:
        step = 1.0 / np.linalg.eigvalsh(ws.G)[..., -1]
    step = np.asarray(step, dtype=np.float64)
    if np.any(step <= 0):
        raise ConfigError("PGD step size must be positive")
    step = step[..., None, None]
    H = np.zeros_like(ws.q) if H0 is None else np.array(H0, dtype=np.float64)
    for _ in range(iterations):
        H = H + step * (ws.q - ws.G @ H)
        if not np.all(np.isfinite(H)) or np.max(np.abs(H)) > DIVERGENCE_LIMIT:
            raise NumericError("PGD diverged; reduce the step size")
    return H


def nmse(H_true: np.ndarray, H_est: np.ndarray):
    """``sum |h - h_hat|^2 / sum |h|^2`` over the last two axes.

    Returns a float for a single matrix, an array for batched input.
    """
    H_true = np.asarray(H_true)
    H_est = np.asarray(H_est)
    if H_true.shape != H_est.shape:
        raise DimensionError(f"shape mismatch {H_true.shape} vs {H_est.shape}")
    num = np.sum(np.abs(H_true - H_est) ** 2, axis=(-2, -1))
    den = np.sum(np.abs(H_true) ** 2, axis=(-2, -1))
    if np.any(den == 0):
        raise MetricError("NMSE undefined for an all-zero true channel")
    out = num / den
    return float(out) if np.ndim(out) == 0 else out


def nmse_db(value) -> float:
    return 10.0 * math.log10(value) if value > 0 else float("-inf")


def set_nmse(H_true: np.ndarray, H_est: np.ndarray) -> float:
    """Mean per-sample NMSE over a batch."""
    vals = np.atleast_1d(nmse(H_true, H_est))
    return math.fsum(vals) / vals.size


def nmse_averaged(chunks: Sequence, estimator: Callable, min_chunks: int = MIN_CHUNKS) -> float:
    """Average of per-chunk NMSEs over disjoint test chunks.

    Each chunk is an object with an ``H`` array; ``estimator(chunk)`` returns
    complex estimates of the same shape.  Per-chunk NMSE is the mean
    per-sample NMSE of that chunk.
    """
    if len(chunks) < min_chunks:
        raise ConfigError(f"need at least {min_chunks} test chunks, got {len(chunks)}")
    scores = [set_nmse(np.asarray(c.H, dtype=np.complex128), np.asarray(estimator(c))) for c in chunks]
    return math.fsum(scores) / len(scores)
