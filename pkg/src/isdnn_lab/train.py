"""Training: loss, reverse-mode gradients, Adam, early stopping, checkpoints."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from .composite import channelspace_projection_adjoint, decompose_channelspace
from .errors import ConfigError, DimensionError, NumericError, StorageError
from .network import (
    LayerParams,
    NetworkParams,
    System,
    init_network,
    parameter_count,
    layer_backward,
    run,
)
from .rng import SeededRng

CHECKPOINT_VERSION = 1
DIVERGENCE_LIMIT = 1e12
SHUFFLE_STREAM = 1 << 40
EVAL_BATCH = 1000


def mse_loss(H_true: np.ndarray, H_hat: np.ndarray) -> float:
    """``sum |h - h_hat|^2 / (B Nt Nr)`` over complex ``(B, Nt, Nr)`` (or ``(Nt, Nr)``) arrays."""
    H_true = np.asarray(H_true)
    H_hat = np.asarray(H_hat)
    if H_true.shape != H_hat.shape:
        raise DimensionError(f"shape mismatch {H_true.shape} vs {H_hat.shape}")
    return float(np.sum(np.abs(H_true - H_hat) ** 2) / H_true.size)


def _target(net: NetworkParams, H, phases):
    H = np.asarray(H, dtype=np.complex128)
    if net.structured:
        if phases is None:
            raise ConfigError("structured network needs steering phases")
        return H * np.conj(phases)
    return H


def backward(net: NetworkParams, X, Y, H, phases=None, *, rng: Optional[SeededRng] = None):
    """Loss and exact gradients for one minibatch.

    Returns ``(loss, grads)`` with ``grads`` aligned to ``net.arrays()``.
    ``G``, ``q`` and ``D^-1`` are data terms and receive no gradient.
    """
    system = System.build(X, Y, phases if net.structured else None)
    res = run(net, system, rng=rng, record=True)
    target = _target(net, H, phases)
    if target.ndim == 2:
        target = target[None]
    est = decompose_channelspace(res.h_hat)
    loss = mse_loss(target, est)
    g_h = channelspace_projection_adjoint(2.0 * (est - target) / target.size)
    g_e = np.zeros_like(g_h)
    per_layer = []
    for params, cache in zip(reversed(net.layers), reversed(res.caches)):
        g_h, g_e, grads = layer_backward(g_h, g_e, cache, params, system, net.psi)
        per_layer.append(grads)
    grads = [g for layer in reversed(per_layer) for g in layer]
    if net.e1_mode == "learned":
        grads.append(g_e.sum(axis=0) if g_e.ndim == 3 else g_e)
    for (name, _), g in zip(net.named_arrays(), grads):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    return loss, grads


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, arrays) -> "AdamState":
        return cls(m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays])


def adam_step(params: List[np.ndarray], grads: List[np.ndarray], state: AdamState, lr: float) -> AdamState:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("parameter, gradient and moment lists differ in length")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


class EarlyStopping:
    """Stop once the score fails to improve on the best for ``patience`` consecutive evaluations."""

    def __init__(self, patience: int = 3, best: float = math.inf, best_index: int = -1, strikes: int = 0):
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        self.patience = patience
        self.best = best
        self.best_index = best_index
        self.strikes = strikes
        self.count = 0

    def update(self, score: float, index: Optional[int] = None) -> bool:
        index = self.count if index is None else index
        self.count += 1
        if score < self.best:
            self.best, self.best_index, self.strikes = score, index, 0
        else:
            self.strikes += 1
        return self.strikes >= self.patience

    @property
    def improved(self) -> bool:
        return self.strikes == 0


@dataclass
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 1e-4
    max_iterations: int = 10000
    eval_every: int = 100
    patience: int = 3
    seed: int = 0
    validation_size: int = 1000

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")


class HistoryRow(NamedTuple):
    iteration: int
    train_loss: float
    val_nmse: float


@dataclass
class TrainState:
    """Everything needed to continue a run bit-exactly."""

    net: NetworkParams
    adam: AdamState
    best_net: NetworkParams
    iteration: int = 0
    best_val: float = math.inf
    best_iteration: int = -1
    strikes: int = 0
    stopped: bool = False
    history: List[HistoryRow] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)

    def progress(self) -> dict:
        return {
            "iteration": self.iteration,
            "best_val": self.best_val,
            "best_iteration": self.best_iteration,
            "strikes": self.strikes,
            "stopped": self.stopped,
            "losses": list(self.losses),
        }


@dataclass
class TrainResult:
    net: NetworkParams
    history: List[HistoryRow]
    state: TrainState

    @property
    def best_val(self) -> float:
        return self.state.best_val


def validation_nmse(net: NetworkParams, dataset, batch: int = EVAL_BATCH) -> float:
    """Mean per-sample NMSE of the network over a dataset."""
    from .bench import network_estimator

    est = network_estimator(net)
    total = []
    for start in range(0, len(dataset), batch):
        part = dataset.subset(np.arange(start, min(start + batch, len(dataset))))
        H = part.H.astype(np.complex128)
        err = np.sum(np.abs(H - est(part)) ** 2, axis=(1, 2)) / np.sum(np.abs(H) ** 2, axis=(1, 2))
        total.append(err)
    return math.fsum(np.concatenate(total)) / len(dataset)


def _check_compatible(net: NetworkParams, ds, role: str) -> None:
    if len(ds) == 0:
        raise ConfigError(f"{role} set is empty")
    if (ds.nt, ds.nr) != (net.nt, net.nr):
        raise DimensionError(f"{role} set is {ds.nt} x {ds.nr}, network expects {net.nt} x {net.nr}")
    if net.structured and ds.phases is None:
        raise ConfigError(f"structured network needs side information in the {role} set")


def batch_indices(n: int, batch_size: int, seed: int, iteration: int) -> np.ndarray:
    """Minibatch for a given iteration: epoch-wise seeded shuffles, remainder dropped."""
    bs = min(batch_size, n)
    steps = n // bs
    epoch, pos = divmod(iteration, steps)
    perm = SeededRng(seed, SHUFFLE_STREAM + epoch).permutation(n)
    return np.sort(perm[pos * bs:(pos + 1) * bs])


def train_loop(
    net: NetworkParams,
    train_set,
    val_set,
    cfg: TrainConfig,
    *,
    state: Optional[TrainState] = None,
    validate: Optional[Callable[[NetworkParams], float]] = None,
    on_eval: Optional[Callable[[TrainState], None]] = None,
) -> TrainResult:
    """Minibatch Adam with validation every ``eval_every`` iterations and early stopping.

    The initial network is evaluated at iteration 0.  The returned network
    is the best-validation checkpoint.  Pass a saved ``state`` to resume.
    """
    cfg.validate()
    _check_compatible(net, train_set, "training")
    if validate is None:
        _check_compatible(net, val_set, "validation")
        validate = lambda n: validation_nmse(n, val_set)

    if state is None:
        net = net.copy()
        state = TrainState(net=net, adam=AdamState.zeros_like(net.arrays()), best_net=net.copy())
    stopper = EarlyStopping(cfg.patience, state.best_val, state.best_iteration, state.strikes)

    def evaluate(window):
        score = validate(state.net)
        if not np.isfinite(score):
            raise NumericError(f"validation NMSE is {score} at iteration {state.iteration}")
        loss = math.fsum(window) / len(window) if window else math.nan
        state.history.append(HistoryRow(state.iteration, loss, score))
        state.stopped = stopper.update(score, state.iteration)
        if stopper.improved:
            state.best_net = state.net.copy()
        state.best_val, state.best_iteration, state.strikes = stopper.best, stopper.best_index, stopper.strikes
        if on_eval is not None:
            on_eval(state)

    if not state.history:
        evaluate([])

    n = len(train_set)
    phases_all = train_set.unit_phases() if net.structured else None
    window_start = len(state.losses)
    while not state.stopped and state.iteration < cfg.max_iterations:
        idx = batch_indices(n, cfg.batch_size, cfg.seed, state.iteration)
        loss, grads = backward(
            state.net,
            train_set.X[idx].astype(np.complex128),
            train_set.Y[idx].astype(np.complex128),
            train_set.H[idx],
            None if phases_all is None else phases_all[idx],
            rng=SeededRng(cfg.seed, state.iteration) if state.net.e1_mode == "per-sample" else None,
        )
        if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
            raise NumericError(f"training diverged at iteration {state.iteration} (loss {loss:.3g})")
        adam_step(state.net.arrays(), grads, state.adam, cfg.learning_rate)
        state.iteration += 1
        state.losses.append(loss)
        if state.iteration % cfg.eval_every == 0:
            evaluate(state.losses[window_start:])
            window_start = len(state.losses)

    return TrainResult(net=state.best_net, history=list(state.history), state=state)


# --------------------------------------------------------------------------- checkpoints


class Checkpoint(NamedTuple):
    net: NetworkParams
    adam: Optional[AdamState]
    history: List[HistoryRow]
    progress: Optional[dict]
    meta: dict


def _blob_path(path: Path) -> Path:
    return path.with_suffix(".bin")


def _float_or_str(x):
    return x if math.isfinite(x) else repr(x)


def save_checkpoint(path, net: NetworkParams, adam: Optional[AdamState] = None,
                    history=None, progress: Optional[dict] = None, meta: Optional[dict] = None) -> Path:
    """Write ``<path>`` (JSON manifest) and ``<path minus suffix>.bin`` (little-endian f64).

    Blob order: per layer ``W1`` (row-major), ``B1``, ``W2``, ``B2``, ``alpha1``,
    ``alpha2``; then ``E1``; then, when Adam state is saved, first moments and
    second moments in learnable-parameter order.
    """
    path = Path(path)
    params = [a for layer in net.layers for a in layer.arrays()] + [net.e1]
    chunks = [np.asarray(a, dtype="<f8").ravel() for a in params]
    if adam is not None:
        chunks += [np.asarray(a, dtype="<f8").ravel() for a in adam.m + adam.v]
    blob = np.concatenate(chunks).tobytes() if chunks else b""
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "K": net.K,
        "Nt": net.nt,
        "Nr": net.nr,
        "mode": net.mode,
        "psi": net.psi,
        "e1_mode": net.e1_mode,
        "seed": net.seed,
        "parameter_count": parameter_count(net.K, net.nr),
        "learnable_values": net.n_learnable,
        "blob": _blob_path(path).name,
        "blob_bytes": len(blob),
        "adam": None if adam is None else {
            "t": adam.t, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps,
        },
        "history": [[r.iteration, _float_or_str(r.train_loss), _float_or_str(r.val_nmse)] for r in history or []],
        "progress": progress,
        "training": meta or {},
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        _blob_path(path).write_bytes(blob)
        path.write_text(json.dumps(manifest, indent=2) + "\n")
    except OSError as exc:
        raise StorageError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path, *, layers: Optional[int] = None, nt: Optional[int] = None,
                    nr: Optional[int] = None) -> Checkpoint:
    """Read a checkpoint; optional ``layers/nt/nr`` assert the expected shape."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
        blob = (path.parent / manifest["blob"]).read_bytes()
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise StorageError(f"cannot read checkpoint {path}: {exc}") from exc
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise StorageError(f"{path}: unsupported checkpoint version {manifest.get('format_version')}")
    K, Nt, Nr = manifest["K"], manifest["Nt"], manifest["Nr"]
    for want, have, what in ((layers, K, "layer count"), (nt, Nt, "Nt"), (nr, Nr, "Nr")):
        if want is not None and want != have:
            raise DimensionError(f"checkpoint {what} is {have}, requested {want}")
    if len(blob) != manifest["blob_bytes"]:
        raise StorageError(f"{path}: blob is {len(blob)} bytes, manifest says {manifest['blob_bytes']}")

    w = 2 * Nr
    layer_shapes = [(w, w), (w,), (w, w), (w,), (), ()]
    e1_shape = (2 * Nt, 2 * Nr)
    values = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    pos = 0

    def take(shape):
        nonlocal pos
        size = int(np.prod(shape))
        if pos + size > values.size:
            raise StorageError(f"{path}: blob too short")
        out = values[pos:pos + size].reshape(shape).copy()
        pos += size
        return out

    layers_ = [LayerParams(*[take(s) for s in layer_shapes]) for _ in range(K)]
    net = NetworkParams(
        nt=Nt, nr=Nr, layers=layers_, e1=take(e1_shape), mode=manifest["mode"],
        psi=manifest["psi"], e1_mode=manifest["e1_mode"], seed=manifest["seed"],
    )
    adam = None
    if manifest.get("adam") is not None:
        shapes = [a.shape for a in net.arrays()]
        m = [take(s) for s in shapes]
        v = [take(s) for s in shapes]
        a = manifest["adam"]
        adam = AdamState(m=m, v=v, t=a["t"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"])
    if pos != values.size:
        raise StorageError(f"{path}: blob has {values.size - pos} trailing values")
    history = [HistoryRow(int(i), float(l), float(v)) for i, l, v in manifest.get("history", [])]
    return Checkpoint(net=net, adam=adam, history=history, progress=manifest.get("progress"),
                      meta=manifest.get("training", {}))


def save_train_state(directory, state: TrainState, meta: Optional[dict] = None) -> Path:
    directory = Path(directory)
    save_checkpoint(directory / "current.json", state.net, state.adam, state.history, state.progress(), meta)
    save_checkpoint(directory / "best.json", state.best_net)
    return directory


def load_train_state(directory) -> TrainState:
    directory = Path(directory)
    cur = load_checkpoint(directory / "current.json")
    best = load_checkpoint(directory / "best.json")
    if cur.adam is None or cur.progress is None:
        raise StorageError(f"{directory}: current.json is not a resumable training state")
    p = cur.progress
    return TrainState(
        net=cur.net, adam=cur.adam, best_net=best.net, iteration=p["iteration"],
        best_val=float(p["best_val"]), best_iteration=p["best_iteration"], strikes=p["strikes"],
        stopped=p["stopped"], history=cur.history, losses=[float(x) for x in p["losses"]],
    )


def write_history_csv(path, history) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "train_loss", "val_nmse"])
            for r in history:
                w.writerow([r.iteration, repr(float(r.train_loss)), repr(float(r.val_nmse))])
    except OSError as exc:
        raise StorageError(f"cannot write history {path}: {exc}") from exc
    return path


def fresh_network(cfg_layers: int, nt: int, nr: int, seed: int, **kw) -> NetworkParams:
    return init_network(cfg_layers, nt, nr, SeededRng(seed, 0), **kw)
