"""Real-valued ("composite") representation of complex matrices.

Two layouts are used:

* rowspace   ``(m, n)`` complex -> ``(m, 2n)`` real, ``[Re(M), Im(M)]``.
  Used for row vectors such as a single pilot or received symbol.
* channelspace ``(a, b)`` complex -> ``(2a, 2b)`` real,
  ``[[Re(M), Im(M)], [-Im(M), Re(M)]]``.

The channelspace layout is a ring homomorphism,
``C(A @ B) == C(A) @ C(B)`` and ``C(A^H) == C(A)^T``, and it satisfies
``R(x @ H) == R(x) @ C(H)``.  Every function accepts leading batch axes.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


def compose_rowspace(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M)
    return np.concatenate([M.real, M.imag], axis=-1).astype(np.float64, copy=False)


def decompose_rowspace(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-1] % 2:
        raise DimensionError(f"rowspace matrix needs an even column count, got {R.shape}")
    n = R.shape[-1] // 2
    return R[..., :n] + 1j * R[..., n:]


def compose_channelspace(H: np.ndarray) -> np.ndarray:
    H = np.asarray(H)
    A = H.real.astype(np.float64, copy=False)
    B = H.imag.astype(np.float64, copy=False)
    top = np.concatenate([A, B], axis=-1)
    bottom = np.concatenate([-B, A], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def decompose_channelspace(M: np.ndarray) -> np.ndarray:
    """Project a real ``(2a, 2b)`` matrix onto the nearest channelspace matrix.

    Returns the complex ``(a, b)`` matrix whose composite form is closest in
    Frobenius norm: the two copies of each block are averaged.  Exact inverse
    of :func:`compose_channelspace`; perturbations of the form
    ``[[E, F], [F, -E]]`` are annihilated.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim < 2 or M.shape[-1] % 2 or M.shape[-2] % 2:
        raise DimensionError(f"channelspace matrix needs even dimensions, got {M.shape}")
    a, b = M.shape[-2] // 2, M.shape[-1] // 2
    re = 0.5 * (M[..., :a, :b] + M[..., a:, b:])
    im = 0.5 * (M[..., :a, b:] - M[..., a:, :b])
    return re + 1j * im


def channelspace_projection_adjoint(G: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`decompose_channelspace` viewed as a map R^{2a x 2b} -> R^{a x b} x R^{a x b}.

    ``G`` is the complex gradient ``dL/dRe + 1j dL/dIm`` with respect to the
    decomposed matrix; the result is the gradient with respect to the real
    composite input.
    """
    G = np.asarray(G)
    gr = 0.5 * G.real
    gi = 0.5 * G.imag
    top = np.concatenate([gr, gi], axis=-1)
    bottom = np.concatenate([-gi, gr], axis=-1)
    return np.concatenate([top, bottom], axis=-2)
