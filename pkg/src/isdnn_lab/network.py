"""ISDNN and S-ISDNN: a K-layer unrolled residual iteration.

State per batch element is a real ``(2Nt, 2Nr)`` composite estimate ``H``
and the residual ``E`` produced by the previous layer.  One layer computes::

    E_new = D^-1 (q - G H)                     residual step
    E_mem = psi(E_prev W1 + B1) W2 + B2        memory path, maps act on the receive axis
    mu    = H + E_new + alpha1 * E_mem
    H'    = (1 - alpha2) mu + alpha2 H
    E_prev <- E_new

The first estimate is ``D^-1 q`` and the first ``E_prev`` is the constant
``E1``.  S-ISDNN runs the same layers on path gains ``beta = H * conj(phi)``:
its Gram operator is ``conj(phi) o (G (phi o B))``, applied column by
column, which keeps ``diag(G)`` unchanged because ``|phi| = 1``.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .baselines import LsWorkspace
from .channel import check_unit_modulus
from .composite import decompose_channelspace
from .errors import ConfigError, DimensionError, NumericError
from .rng import SeededRng

PARAM_NAMES = ("w1", "b1", "w2", "b2", "alpha1", "alpha2")
PSI_CHOICES = ("tanh", "none")
E1_CHOICES = ("shared", "per-sample", "learned")
MODE_CHOICES = ("unstructured", "structured")
E1_STREAM = 0xE1


def parameter_count(layers: int, nr: int) -> int:
    """Learnable values: two ``2Nr x 2Nr`` maps, two biases and two gates per layer."""
    if layers < 1 or nr < 1:
        raise ConfigError("layers and Nr must be positive")
    width = 2 * nr
    return layers * (2 * width * width + 2 * width + 2)


@dataclass
class LayerParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    alpha1: np.ndarray
    alpha2: np.ndarray

    def arrays(self) -> List[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.alpha1, self.alpha2]


@dataclass
class NetworkParams:
    nt: int
    nr: int
    layers: List[LayerParams]
    e1: np.ndarray
    mode: str = "unstructured"
    psi: str = "tanh"
    e1_mode: str = "shared"
    seed: int = 0

    @property
    def K(self) -> int:
        return len(self.layers)

    @property
    def structured(self) -> bool:
        return self.mode == "structured"

    def arrays(self) -> List[np.ndarray]:
        """Learnable arrays in canonical order (layer by layer, then ``E1`` if learned)."""
        out = [a for layer in self.layers for a in layer.arrays()]
        if self.e1_mode == "learned":
            out.append(self.e1)
        return out

    def named_arrays(self):
        names = [f"layer{k}.{n}" for k in range(self.K) for n in PARAM_NAMES]
        if self.e1_mode == "learned":
            names.append("e1")
        return list(zip(names, self.arrays()))

    @property
    def n_learnable(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "NetworkParams":
        return copy.deepcopy(self)


def init_network(
    layers: int,
    nt: int,
    nr: int,
    rng: SeededRng,
    *,
    psi: str = "tanh",
    e1_mode: str = "shared",
    mode: str = "unstructured",
) -> NetworkParams:
    """Fresh parameters: ``alpha1 ~ U[0,1)``, ``alpha2 = 0.5``, ``W ~ U(+-1/sqrt(2Nr))``, ``B = 0``, ``E1 ~ U[0,1)``."""
    if layers < 1:
        raise ConfigError("need at least one layer")
    if psi not in PSI_CHOICES:
        raise ConfigError(f"psi must be one of {PSI_CHOICES}")
    if e1_mode not in E1_CHOICES:
        raise ConfigError(f"e1 mode must be one of {E1_CHOICES}")
    if mode not in MODE_CHOICES:
        raise ConfigError(f"mode must be one of {MODE_CHOICES}")
    width = 2 * nr
    bound = 1.0 / np.sqrt(width)
    params = []
    for _ in range(layers):
        alpha1 = np.array(rng.uniform(None, 0.0, 1.0), dtype=np.float64)
        w1 = rng.uniform((width, width), -bound, bound)
        w2 = rng.uniform((width, width), -bound, bound)
        params.append(
            LayerParams(
                w1=w1, b1=np.zeros(width), w2=w2, b2=np.zeros(width),
                alpha1=alpha1, alpha2=np.array(0.5),
            )
        )
    e1 = rng.uniform((2 * nt, 2 * nr), 0.0, 1.0)
    return NetworkParams(
        nt=nt, nr=nr, layers=params, e1=e1, mode=mode, psi=psi, e1_mode=e1_mode, seed=rng.seed
    )


def _rotate(M: np.ndarray, c: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Multiply each half-row block of a composite matrix elementwise by ``c + i s``."""
    nr = M.shape[-1] // 2
    c2 = np.concatenate([c, c], axis=-2)
    s2 = np.concatenate([s, s], axis=-2)
    re, im = M[..., :nr], M[..., nr:]
    return np.concatenate([re * c2 - im * s2, re * s2 + im * c2], axis=-1)


@dataclass
class System:
    """Per-batch data terms: Gram operator, ``q`` and ``D^-1``.

    With ``phases`` set, the operator and ``q`` live in path-gain space.
    """

    G: np.ndarray
    q: np.ndarray
    d_inv: np.ndarray
    cos: Optional[np.ndarray] = None
    sin: Optional[np.ndarray] = None

    @classmethod
    def build(cls, X, Y, phases=None) -> "System":
        X = np.asarray(X)
        Y = np.asarray(Y)
        if X.ndim == 2:
            X, Y = X[None], Y[None]
            if phases is not None:
                phases = np.asarray(phases)[None]
        ws = LsWorkspace.from_blocks(X, Y)
        if phases is None:
            return cls(G=ws.G, q=ws.q, d_inv=ws.d_inv)
        phases = np.asarray(phases)
        if phases.shape != (X.shape[0], X.shape[-1], Y.shape[-1]):
            raise DimensionError(f"phases {phases.shape} do not match batch of Nt x Nr channels")
        check_unit_modulus(phases)
        c, s = phases.real.astype(np.float64), phases.imag.astype(np.float64)
        return cls(G=ws.G, q=_rotate(ws.q, c, -s), d_inv=ws.d_inv, cos=c, sin=s)

    @property
    def batch(self) -> int:
        return self.q.shape[0]

    def gram(self, M: np.ndarray) -> np.ndarray:
        """Apply the (symmetric) Gram operator."""
        if self.cos is None:
            return self.G @ M
        return _rotate(self.G @ _rotate(M, self.cos, self.sin), self.cos, -self.sin)


@dataclass
class LayerState:
    h_hat: np.ndarray
    e_prev: np.ndarray


@dataclass
class LayerCache:
    h_in: np.ndarray
    e_prev: np.ndarray
    act: np.ndarray
    e_mem: np.ndarray
    mu: np.ndarray


def _psi(z, psi):
    return np.tanh(z) if psi == "tanh" else z


def layer_forward(state: LayerState, params: LayerParams, system: System, psi: str = "tanh", index: int = 0):
    """Advance one layer; returns ``(new_state, cache)``."""
    h = state.h_hat
    # overflow surfaces as NumericError below
    with np.errstate(over="ignore", invalid="ignore"):
        e_new = system.d_inv * (system.q - system.gram(h))
        act = _psi(state.e_prev @ params.w1 + params.b1, psi)
        e_mem = act @ params.w2 + params.b2
        mu = h + e_new + params.alpha1 * e_mem
        h_next = (1.0 - params.alpha2) * mu + params.alpha2 * h
    if not np.all(np.isfinite(h_next)):
        raise NumericError(f"non-finite estimate in layer {index}")
    cache = LayerCache(h_in=h, e_prev=state.e_prev, act=act, e_mem=e_mem, mu=mu)
    return LayerState(h_hat=h_next, e_prev=e_new), cache


def layer_backward(g_h: np.ndarray, g_e: np.ndarray, cache: LayerCache, params: LayerParams,
                   system: System, psi: str = "tanh"):
    """Reverse of :func:`layer_forward`.

    ``g_h`` and ``g_e`` are loss gradients w.r.t. the layer's outputs
    ``h_next`` and ``e_new``.  Returns ``(g_h_in, g_e_prev, grads)`` with
    ``grads`` ordered as :data:`PARAM_NAMES`.
    """
    a2 = params.alpha2
    g_mu = (1.0 - a2) * g_h
    g_alpha2 = np.sum(g_h * (cache.h_in - cache.mu))
    g_alpha1 = np.sum(g_mu * cache.e_mem)
    g_enew = g_mu + g_e
    g_emem = params.alpha1 * g_mu

    width = g_emem.shape[-1]
    act = np.broadcast_to(cache.act, g_emem.shape)
    act2 = act.reshape(-1, width)
    g_w2 = act2.T @ g_emem.reshape(-1, width)
    g_b2 = g_emem.reshape(-1, width).sum(axis=0)
    g_act = g_emem @ params.w2.T
    g_z = g_act * (1.0 - act ** 2) if psi == "tanh" else g_act
    g_z2 = g_z.reshape(-1, width)
    e_prev = np.broadcast_to(cache.e_prev, g_z.shape).reshape(-1, width)
    g_w1 = e_prev.T @ g_z2
    g_b1 = g_z2.sum(axis=0)
    g_eprev = g_z @ params.w1.T

    g_hin = a2 * g_h + g_mu - system.gram(system.d_inv * g_enew)
    grads = [g_w1, g_b1, g_w2, g_b2, np.asarray(g_alpha1), np.asarray(g_alpha2)]
    return g_hin, g_eprev, grads


@dataclass
class ForwardResult:
    h_hat: np.ndarray
    snapshots: List[np.ndarray]
    system: System
    caches: List[LayerCache] = field(default_factory=list)
    e1: Optional[np.ndarray] = None


def _initial_residual(net: NetworkParams, batch: int, rng: Optional[SeededRng]) -> np.ndarray:
    if net.e1_mode == "per-sample":
        rng = rng if rng is not None else SeededRng(net.seed, E1_STREAM)
        return rng.uniform((batch, 2 * net.nt, 2 * net.nr), 0.0, 1.0)
    return net.e1


def run(net: NetworkParams, system: System, *, rng: Optional[SeededRng] = None, record: bool = False) -> ForwardResult:
    """Unrolled pass over a prepared :class:`System`; ``record`` keeps the tape for backward."""
    if system.q.shape[-2:] != (2 * net.nt, 2 * net.nr):
        raise DimensionError(
            f"network expects {net.nt} x {net.nr} channels, batch is "
            f"{system.q.shape[-2] // 2} x {system.q.shape[-1] // 2}"
        )
    h = system.d_inv * system.q
    e1 = _initial_residual(net, system.batch, rng)
    state = LayerState(h_hat=h, e_prev=e1)
    snapshots = [h]
    caches = []
    for k, params in enumerate(net.layers):
        state, cache = layer_forward(state, params, system, net.psi, k)
        snapshots.append(state.h_hat)
        if record:
            caches.append(cache)
    return ForwardResult(h_hat=state.h_hat, snapshots=snapshots, system=system, caches=caches, e1=e1)


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite network input")


def forward(net: NetworkParams, X, Y, *, rng: Optional[SeededRng] = None):
    """ISDNN on a batch; returns ``(H_hat composite, per-layer composite snapshots)``.

    Snapshot 0 is the diagonal initialization, snapshot ``k`` follows layer ``k``.
    """
    _check_finite(X, Y)
    res = run(net, System.build(X, Y), rng=rng)
    return res.h_hat, res.snapshots


def sisdnn_forward(net: NetworkParams, X, Y, phases, *, rng: Optional[SeededRng] = None):
    """S-ISDNN on a batch; returns complex ``(beta_hat, H_hat = beta_hat * phases)``."""
    if phases is None:
        raise ConfigError("S-ISDNN needs steering-phase side information")
    _check_finite(X, Y)
    system = System.build(X, Y, phases)
    res = run(net, system, rng=rng)
    beta = decompose_channelspace(res.h_hat)
    ph = np.asarray(phases)
    return beta, beta * (ph if ph.ndim == 3 else ph[None])


def estimate(net: NetworkParams, X, Y, phases=None, *, rng: Optional[SeededRng] = None) -> np.ndarray:
    """Complex channel estimate for either mode."""
    if net.structured:
        return sisdnn_forward(net, X, Y, phases, rng=rng)[1]
    return decompose_channelspace(forward(net, X, Y, rng=rng)[0])
