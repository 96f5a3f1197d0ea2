"""NMSE-versus-SNR sweeps, inference timing and report files.

Per SNR level the matching test records are split into 100 equal,
disjoint chunks (any remainder is dropped); the reported NMSE is the mean
of the per-chunk NMSEs.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .airsim import awgn_sigma2
from .baselines import MIN_CHUNKS, diag_init, ls_estimate, mmse_estimate, nmse_averaged, nmse_db, pgd_estimate
from .composite import decompose_channelspace
from .errors import ConfigError, StorageError
from .network import NetworkParams, estimate

COLUMNS = ("estimator", "snr_db", "nmse_linear", "nmse_db", "samples", "runtime_s_per_sample")
BASELINE_NAMES = ("oracle", "zero", "ls", "mmse", "diag-init", "pgd")
NETWORK_NAMES = ("isdnn", "sisdnn")
PGD_ITERATIONS = 100


@dataclass
class Estimator:
    """A named batch estimator: dataset slice in, complex ``(B, Nt, Nr)`` estimates out."""

    name: str
    fn: Callable

    def __call__(self, ds) -> np.ndarray:
        return self.fn(ds)


def _blocks(ds):
    return ds.X.astype(np.complex128), ds.Y.astype(np.complex128)


def _ls(ds):
    return decompose_channelspace(ls_estimate(*_blocks(ds)))


def _mmse(ds):
    return decompose_channelspace(mmse_estimate(*_blocks(ds), sigma2=awgn_sigma2(ds.snr_db, ds.nt)))


def _diag(ds):
    return decompose_channelspace(diag_init(*_blocks(ds)))


def _pgd(ds):
    return decompose_channelspace(pgd_estimate(*_blocks(ds), iterations=PGD_ITERATIONS))


_BASELINES = {
    "oracle": lambda ds: ds.H.astype(np.complex128),
    "zero": lambda ds: np.zeros(ds.H.shape, np.complex128),
    "ls": _ls,
    "mmse": _mmse,
    "diag-init": _diag,
    "pgd": _pgd,
}


def network_estimator(net: NetworkParams, name: Optional[str] = None) -> Estimator:
    def fn(ds):
        X, Y = _blocks(ds)
        phases = ds.unit_phases() if net.structured else None
        return estimate(net, X, Y, phases)

    return Estimator(name or ("sisdnn" if net.structured else "isdnn"), fn)


def make_estimators(names: Iterable[str], net: Optional[NetworkParams] = None) -> Dict[str, Estimator]:
    out = {}
    for name in names:
        if name in _BASELINES:
            out[name] = Estimator(name, _BASELINES[name])
        elif name in NETWORK_NAMES:
            if net is None:
                raise ConfigError(f"estimator {name!r} needs a checkpoint")
            if net.structured != (name == "sisdnn"):
                raise ConfigError(f"checkpoint mode {net.mode!r} cannot serve estimator {name!r}")
            out[name] = network_estimator(net, name)
        else:
            raise ConfigError(f"unknown estimator {name!r}; choose from {BASELINE_NAMES + NETWORK_NAMES}")
    return out


@dataclass
class EvalRow:
    estimator: str
    snr_db: float
    nmse_linear: float
    nmse_db: float
    samples: int
    runtime_s_per_sample: Optional[float] = None

    def __post_init__(self):
        if self.samples <= 0:
            raise ConfigError("report rows need a positive sample count")


@dataclass
class EvalReport:
    rows: List[EvalRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def sorted_rows(self) -> List[EvalRow]:
        return sorted(self.rows, key=lambda r: (r.estimator, r.snr_db))

    def row(self, estimator: str, snr_db: float) -> EvalRow:
        for r in self.rows:
            if r.estimator == estimator and r.snr_db == snr_db:
                return r
        raise KeyError((estimator, snr_db))


def snr_chunks(test_set, level: float, n_chunks: int = MIN_CHUNKS):
    idx = np.flatnonzero(test_set.snr_db == np.float32(level))
    if idx.size == 0:
        raise ConfigError(f"SNR level {level} dB is absent from the test set")
    size = idx.size // n_chunks
    if size == 0:
        raise ConfigError(f"{idx.size} samples at {level} dB cannot fill {n_chunks} chunks")
    return [test_set.subset(idx[i * size:(i + 1) * size]) for i in range(n_chunks)]


def snr_sweep(estimators, test_set, snr_levels: Optional[Sequence[float]] = None,
              n_chunks: int = MIN_CHUNKS) -> EvalReport:
    """Chunk-averaged NMSE for every estimator at every SNR level."""
    if isinstance(estimators, dict):
        estimators = list(estimators.values())
    levels = [float(s) for s in (test_set.snr_levels if snr_levels is None else snr_levels)]
    report = EvalReport(metadata={"nt": test_set.nt, "nr": test_set.nr, "np": test_set.n_pilots,
                                  "dataset_seed": test_set.seed, "chunks": n_chunks})
    for level in levels:
        chunks = snr_chunks(test_set, level, n_chunks)
        samples = sum(len(c) for c in chunks)
        for est in estimators:
            value = nmse_averaged(chunks, est, min_chunks=n_chunks)
            report.rows.append(EvalRow(est.name, level, value, nmse_db(value), samples))
    report.rows = report.sorted_rows()
    return report


def time_inference(estimator, test_set, repetitions: int = 5, batch_size: int = 1000) -> float:
    """Median wall-clock seconds per sample over ``repetitions`` timed passes (one warm-up pass excluded).

    Runs with BLAS pinned to a single thread.
    """
    if repetitions < 3:
        raise ConfigError("timing needs at least 3 repetitions")
    if len(test_set) == 0:
        raise ConfigError("cannot time an empty dataset")
    parts = [test_set.subset(np.arange(s, min(s + batch_size, len(test_set))))
             for s in range(0, len(test_set), batch_size)]

    def one_pass():
        t0 = time.perf_counter()
        for p in parts:
            estimator(p)
        return time.perf_counter() - t0

    with threadpool_limits(limits=1):
        one_pass()
        times = [one_pass() for _ in range(repetitions)]
    return statistics.median(times) / len(test_set)


def bench(estimators, test_set, repetitions: int = 5, snr_levels=None, n_chunks: int = MIN_CHUNKS) -> EvalReport:
    """Sweep plus per-SNR timing in the ``runtime_s_per_sample`` column."""
    report = snr_sweep(estimators, test_set, snr_levels, n_chunks)
    ests = {e.name: e for e in (estimators.values() if isinstance(estimators, dict) else estimators)}
    subsets = {}
    for row in report.rows:
        if row.snr_db not in subsets:
            subsets[row.snr_db] = test_set.subset(np.flatnonzero(test_set.snr_db == np.float32(row.snr_db)))
        row.runtime_s_per_sample = time_inference(ests[row.estimator], subsets[row.snr_db], repetitions)
    return report


# --------------------------------------------------------------------------- report files


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def _json_num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def _parse_num(x):
    if x is None or x == "":
        return None
    return float(x)


def emit_report(report: EvalReport, path, fmt: Optional[str] = None) -> Path:
    """Write CSV (columns as :data:`COLUMNS`) or JSON (rows plus metadata); rows sorted by estimator, SNR."""
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    rows = report.sorted_rows()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(COLUMNS)
                for r in rows:
                    w.writerow([r.estimator, _fmt(r.snr_db), _fmt(r.nmse_linear), _fmt(r.nmse_db),
                                _fmt(r.samples), _fmt(r.runtime_s_per_sample)])
        elif fmt == "json":
            doc = {
                "columns": list(COLUMNS),
                "metadata": report.metadata,
                "rows": [
                    {"estimator": r.estimator, "snr_db": _json_num(r.snr_db),
                     "nmse_linear": _json_num(r.nmse_linear), "nmse_db": _json_num(r.nmse_db),
                     "samples": int(r.samples), "runtime_s_per_sample": _json_num(r.runtime_s_per_sample)}
                    for r in rows
                ],
            }
            path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
        else:
            raise ConfigError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise StorageError(f"cannot write report {path}: {exc}") from exc
    return path


def read_report(path, fmt: Optional[str] = None) -> EvalReport:
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    try:
        text = path.read_text()
    except OSError as exc:
        raise StorageError(f"cannot read report {path}: {exc}") from exc
    if fmt == "json":
        doc = json.loads(text)
        raw, meta = doc["rows"], doc.get("metadata", {})
    else:
        raw, meta = list(csv.DictReader(text.splitlines())), {}
    rows = [
        EvalRow(r["estimator"], _parse_num(r["snr_db"]), _parse_num(r["nmse_linear"]),
                _parse_num(r["nmse_db"]), int(r["samples"]), _parse_num(r["runtime_s_per_sample"]))
        for r in raw
    ]
    return EvalReport(rows=rows, metadata=meta)
