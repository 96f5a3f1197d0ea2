"""Pilot generation, AWGN and dataset persistence.

Dataset file layout (little-endian)::

    b"CEDS"            magic
    u16                version (= 1)
    u32 x 4            Nt, Nr, Np, count
    u8                 flags (bit 0: structured side info, bit 1: fixed pilots)
    u64                seed
    u32, f32 x n       number of SNR levels, SNR levels in dB
    records            count x record

    record = X (Np x Nt), Y (Np x Nr), H (Nt x Nr)   complex, (re, im) f32 pairs, row-major
             snr_db                                    f32
             [theta (Nt), azimuth (Nt) f32,           only when structured
              phases (Nt x Nr) (re, im) f32 pairs]

A sibling ``<file>.json`` manifest mirrors the header.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .channel import (
    ArrayGeometry,
    gen_rayleigh,
    gen_structured,
    random_structured_params,
    ula,
)
from .errors import ConfigError, DimensionError, EstimationError, StorageError
from .rng import SeededRng

MAGIC = b"CEDS"
VERSION = 1
FLAG_STRUCTURED = 1
FLAG_FIXED_PILOTS = 2
GRAM_COND_LIMIT = 1e12
PILOT_ATTEMPTS = 16
FIXED_PILOT_STREAM = 1 << 63

_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0])
QAM16 = ((_LEVELS[:, None] + 1j * _LEVELS[None, :]) / np.sqrt(10.0)).ravel()

_HEADER = struct.Struct("<4sHIIIIBQI")


def gen_pilots(n_pilots: int, nt: int, rng: SeededRng, max_attempts: int = PILOT_ATTEMPTS) -> np.ndarray:
    """Draw an ``(Np, Nt)`` block of i.i.d. unit-energy 16-QAM pilots.

    Blocks whose Gram matrix has condition number above 1e12 are redrawn.
    """
    if n_pilots < nt:
        raise ConfigError(f"pilot length Np={n_pilots} must be >= Nt={nt}")
    for _ in range(max_attempts):
        X = QAM16[rng.integers(0, QAM16.size, (n_pilots, nt))]
        if np.linalg.cond(X.conj().T @ X) < GRAM_COND_LIMIT:
            return X
    raise EstimationError(f"no well-conditioned pilot block in {max_attempts} draws")


def awgn_sigma2(snr_db, nt: int):
    """Per-antenna complex noise variance for unit-energy pilots and unit-variance channels.

    Received signal power per antenna is ``Nt``, so ``sigma2 = Nt / 10**(snr_db/10)``.
    ``snr_db = inf`` gives 0.
    """
    if nt < 1:
        raise ConfigError("Nt must be positive")
    return nt / np.power(10.0, np.asarray(snr_db, dtype=np.float64) / 10.0)


def transmit(X: np.ndarray, H: np.ndarray, snr_db: float, rng: SeededRng) -> np.ndarray:
    """Forward model ``Y = X H + W`` with ``W`` i.i.d. CN(0, sigma2)."""
    X = np.asarray(X)
    H = np.asarray(H)
    if X.ndim != 2 or H.ndim != 2 or X.shape[1] != H.shape[0]:
        raise DimensionError(f"X {X.shape} and H {H.shape} do not conform")
    sigma2 = float(awgn_sigma2(snr_db, H.shape[0]))
    W = rng.complex_gaussian((X.shape[0], H.shape[1]), sigma2)
    return X @ H + W


@dataclass
class SampleRecord:
    X: np.ndarray
    Y: np.ndarray
    H: np.ndarray
    snr_db: float
    theta: Optional[np.ndarray] = None
    azimuth: Optional[np.ndarray] = None
    phases: Optional[np.ndarray] = None


@dataclass
class DatasetConfig:
    nt: int = 8
    nr: int = 64
    n_pilots: int = 8
    count: int = 1000
    snr_db: Sequence[float] = (0.0, 5.0, 10.0, 15.0, 20.0)
    seed: int = 0
    structured: bool = False
    fixed_pilots: bool = False
    geometry: Optional[ArrayGeometry] = None

    def validate(self) -> None:
        if self.nt < 1 or self.nr < 1:
            raise ConfigError("Nt and Nr must be positive")
        if self.n_pilots < self.nt:
            raise ConfigError(f"pilot length Np={self.n_pilots} must be >= Nt={self.nt}")
        if self.count < 0:
            raise ConfigError("count must be non-negative")
        if len(self.snr_db) == 0:
            raise ConfigError("SNR level list must be non-empty")
        if self.geometry is not None and self.geometry.count != self.nr:
            raise ConfigError(f"geometry has {self.geometry.count} elements but Nr = {self.nr}")


@dataclass
class Dataset:
    """Columnar container; arrays are complex64 / float32 as stored on disk."""

    nt: int
    nr: int
    n_pilots: int
    seed: int
    snr_levels: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    H: np.ndarray
    snr_db: np.ndarray
    structured: bool = False
    fixed_pilots: bool = False
    theta: Optional[np.ndarray] = None
    azimuth: Optional[np.ndarray] = None
    phases: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.H.shape[0]

    @property
    def count(self) -> int:
        return len(self)

    def record(self, i: int) -> SampleRecord:
        return SampleRecord(
            X=self.X[i], Y=self.Y[i], H=self.H[i], snr_db=float(self.snr_db[i]),
            theta=None if self.theta is None else self.theta[i],
            azimuth=None if self.azimuth is None else self.azimuth[i],
            phases=None if self.phases is None else self.phases[i],
        )

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        pick = lambda a: None if a is None else a[idx]
        return Dataset(
            nt=self.nt, nr=self.nr, n_pilots=self.n_pilots, seed=self.seed,
            snr_levels=self.snr_levels, X=self.X[idx], Y=self.Y[idx], H=self.H[idx],
            snr_db=self.snr_db[idx], structured=self.structured, fixed_pilots=self.fixed_pilots,
            theta=pick(self.theta), azimuth=pick(self.azimuth), phases=pick(self.phases),
            meta=dict(self.meta),
        )

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        n = len(self)
        if not 0 <= n_first <= n:
            raise ConfigError(f"cannot split {n} records at {n_first}")
        return self.subset(np.arange(n_first)), self.subset(np.arange(n_first, n))

    def unit_phases(self) -> np.ndarray:
        """Side-info phases in complex128, renormalized to exact unit modulus after f32 decoding."""
        if self.phases is None:
            raise ConfigError("dataset carries no structured side information")
        p = self.phases.astype(np.complex128)
        return p / np.abs(p)

    def header(self) -> dict:
        return {
            "magic": MAGIC.decode(),
            "version": VERSION,
            "nt": self.nt,
            "nr": self.nr,
            "np": self.n_pilots,
            "count": len(self),
            "structured": self.structured,
            "fixed_pilots": self.fixed_pilots,
            "seed": self.seed,
            "snr_db": [float(s) for s in self.snr_levels],
        }


def gen_dataset(cfg: DatasetConfig) -> Dataset:
    """Generate ``cfg.count`` records; record ``i`` draws from stream ``i`` of ``cfg.seed``.

    Draw order per record: SNR level (uniform over the list), pilot block (unless
    ``fixed_pilots``), channel, noise.
    """
    cfg.validate()
    nt, nr, npl, n = cfg.nt, cfg.nr, cfg.n_pilots, cfg.count
    levels = np.asarray(cfg.snr_db, dtype=np.float32)
    geometry = cfg.geometry
    if cfg.structured and geometry is None:
        geometry = ula(nr, 0.5, "x")

    X = np.empty((n, npl, nt), np.complex64)
    Y = np.empty((n, npl, nr), np.complex64)
    H = np.empty((n, nt, nr), np.complex64)
    snr = np.empty(n, np.float32)
    if cfg.structured:
        theta = np.empty((n, nt), np.float32)
        azimuth = np.empty((n, nt), np.float32)
        phases = np.empty((n, nt, nr), np.complex64)
    else:
        theta = azimuth = phases = None

    shared = gen_pilots(npl, nt, SeededRng(cfg.seed, FIXED_PILOT_STREAM)) if cfg.fixed_pilots else None
    for i in range(n):
        rng = SeededRng(cfg.seed, i)
        s = float(levels[rng.integers(0, levels.size)])
        x = shared if shared is not None else gen_pilots(npl, nt, rng)
        if cfg.structured:
            real = gen_structured(random_structured_params(nt, geometry, rng), nt)
            theta[i] = real.structured.theta[0]
            azimuth[i] = real.structured.phi[0]
            phases[i] = real.phases
        else:
            real = gen_rayleigh(nt, nr, rng)
        X[i] = x
        H[i] = real.H
        Y[i] = transmit(x, real.H, s, rng)
        snr[i] = s

    return Dataset(
        nt=nt, nr=nr, n_pilots=npl, seed=int(cfg.seed), snr_levels=levels,
        X=X, Y=Y, H=H, snr_db=snr, structured=cfg.structured, fixed_pilots=cfg.fixed_pilots,
        theta=theta, azimuth=azimuth, phases=phases,
    )


def _record_dtype(nt: int, nr: int, npl: int, structured: bool) -> np.dtype:
    fields = [
        ("X", "<c8", (npl, nt)),
        ("Y", "<c8", (npl, nr)),
        ("H", "<c8", (nt, nr)),
        ("snr_db", "<f4"),
    ]
    if structured:
        fields += [("theta", "<f4", (nt,)), ("azimuth", "<f4", (nt,)), ("phases", "<c8", (nt, nr))]
    return np.dtype(fields)


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def dataset_bytes(ds: Dataset) -> bytes:
    levels = np.asarray(ds.snr_levels, dtype="<f4")
    flags = (FLAG_STRUCTURED if ds.structured else 0) | (FLAG_FIXED_PILOTS if ds.fixed_pilots else 0)
    head = _HEADER.pack(MAGIC, VERSION, ds.nt, ds.nr, ds.n_pilots, len(ds), flags, ds.seed, levels.size)
    rec = np.zeros(len(ds), dtype=_record_dtype(ds.nt, ds.nr, ds.n_pilots, ds.structured))
    rec["X"], rec["Y"], rec["H"], rec["snr_db"] = ds.X, ds.Y, ds.H, ds.snr_db
    if ds.structured:
        rec["theta"], rec["azimuth"], rec["phases"] = ds.theta, ds.azimuth, ds.phases
    return head + levels.tobytes() + rec.tobytes()


def save_dataset(path, ds: Dataset) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(dataset_bytes(ds))
        manifest = ds.header() | {"bytes": path.stat().st_size, "file": path.name}
        manifest_path(path).write_text(json.dumps(manifest, indent=2) + "\n")
    except OSError as exc:
        raise StorageError(f"cannot write dataset {path}: {exc}") from exc
    return path


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read dataset {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise StorageError(f"{path}: truncated header")
    magic, version, nt, nr, npl, count, flags, seed, n_levels = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise StorageError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise StorageError(f"{path}: unsupported version {version}")
    off = _HEADER.size
    levels = np.frombuffer(blob, "<f4", n_levels, off).astype(np.float32)
    off += 4 * n_levels
    structured = bool(flags & FLAG_STRUCTURED)
    dtype = _record_dtype(nt, nr, npl, structured)
    if len(blob) - off != count * dtype.itemsize:
        raise StorageError(
            f"{path}: payload is {len(blob) - off} bytes, header implies {count * dtype.itemsize}"
        )
    rec = np.frombuffer(blob, dtype, count, off)
    get = lambda name: np.ascontiguousarray(rec[name]).astype(dtype[name].base.newbyteorder("="))
    return Dataset(
        nt=nt, nr=nr, n_pilots=npl, seed=seed, snr_levels=levels,
        X=get("X"), Y=get("Y"), H=get("H"), snr_db=get("snr_db"),
        structured=structured, fixed_pilots=bool(flags & FLAG_FIXED_PILOTS),
        theta=get("theta") if structured else None,
        azimuth=get("azimuth") if structured else None,
        phases=get("phases") if structured else None,
    )
