"""Channel realizations and receive-array geometry.

Element positions are expressed in carrier wavelengths, so the wave number
times the projected position collapses to ``2*pi * (direction . position)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .rng import SeededRng

PHASE_TOL = 1e-9


@dataclass(frozen=True)
class ArrayGeometry:
    """Receive array element positions, ``(Nr, 3)``, in wavelengths."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise DimensionError(f"positions must be (Nr, 3) with Nr >= 1, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ConfigError("array positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return self.positions.shape[0]


_AXES = {"x": 0, "y": 1, "z": 2}


def ula(n: int, spacing: float = 0.5, axis: str = "x") -> ArrayGeometry:
    """Uniform linear array: element ``l`` at ``l * spacing`` along ``axis``."""
    if n < 1:
        raise ConfigError("ULA needs at least one element")
    if spacing <= 0:
        raise ConfigError("ULA spacing must be positive")
    if axis not in _AXES:
        raise ConfigError(f"axis must be one of x, y, z; got {axis!r}")
    pos = np.zeros((n, 3))
    pos[:, _AXES[axis]] = spacing * np.arange(n)
    return ArrayGeometry(pos)


def upa(nx: int, ny: int, spacing: float = 0.5) -> ArrayGeometry:
    """Uniform planar array in the x-y plane, x varying fastest."""
    if nx < 1 or ny < 1:
        raise ConfigError("UPA needs at least one element per side")
    if spacing <= 0:
        raise ConfigError("UPA spacing must be positive")
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    pos = np.zeros((nx * ny, 3))
    pos[:, 0] = spacing * ix.ravel()
    pos[:, 1] = spacing * iy.ravel()
    return ArrayGeometry(pos)


def geometry_from_config(spec: dict, nr: int) -> ArrayGeometry:
    """Build a geometry from ``{type, spacing, counts, positions, axis}``."""
    kind = spec.get("type", "ula")
    spacing = float(spec.get("spacing", 0.5))
    counts = list(spec.get("counts") or [])
    if kind == "ula":
        n = counts[0] if counts else nr
        geom = ula(int(n), spacing, spec.get("axis", "x"))
    elif kind == "upa":
        if len(counts) != 2:
            raise ConfigError("upa geometry needs counts [nx, ny]")
        geom = upa(int(counts[0]), int(counts[1]), spacing)
    elif kind == "explicit":
        positions = spec.get("positions")
        if not positions:
            raise ConfigError("explicit geometry needs positions")
        geom = ArrayGeometry(np.asarray(positions, dtype=np.float64))
    else:
        raise ConfigError(f"unknown geometry type {kind!r}")
    if geom.count != nr:
        raise ConfigError(f"geometry has {geom.count} elements but Nr = {nr}")
    return geom


def direction(theta, phi) -> np.ndarray:
    """Unit vector(s) for zenith ``theta`` and azimuth ``phi``; shape ``(..., 3)``."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def steering_phase(geometry: ArrayGeometry, theta, phi) -> np.ndarray:
    """Unit-modulus phase ``exp(-i 2 pi c_hat . c_l)`` across the array.

    Scalar angles give a length-``Nr`` vector.  Array-valued angles broadcast:
    angle shape ``S`` gives output shape ``S + (Nr,)``.
    """
    proj = direction(theta, phi) @ geometry.positions.T
    return np.exp(-2j * np.pi * proj)


@dataclass(frozen=True)
class StructuredChannelParams:
    """Ray parameters: gains ``beta`` and zenith/azimuth angles, each ``(P, Nt)``."""

    beta: np.ndarray
    theta: np.ndarray
    phi: np.ndarray
    geometry: ArrayGeometry

    @property
    def rays(self) -> int:
        return np.shape(self.beta)[0]


@dataclass(frozen=True)
class ChannelRealization:
    H: np.ndarray
    structured: Optional[StructuredChannelParams] = None
    phases: Optional[np.ndarray] = None


def gen_rayleigh(nt: int, nr: int, rng: SeededRng, std: float = 1 / np.sqrt(2)) -> ChannelRealization:
    """I.i.d. Rayleigh channel: each real component ~ N(0, std), unit complex variance by default."""
    if nt < 1 or nr < 1:
        raise ConfigError("channel dimensions must be positive")
    re = rng.gaussian((nt, nr), 0.0, std)
    im = rng.gaussian((nt, nr), 0.0, std)
    return ChannelRealization(H=re + 1j * im)


def gen_structured(params: StructuredChannelParams, nt: int) -> ChannelRealization:
    """Sum-of-rays channel ``h[t, l] = sum_p beta[p, t] exp(-i 2 pi c_hat(p, t) . c_l)``.

    For a single ray the steering phases are returned too, and ``H == beta * phases``.
    """
    beta = np.asarray(params.beta, dtype=np.complex128)
    theta = np.asarray(params.theta, dtype=np.float64)
    phi = np.asarray(params.phi, dtype=np.float64)
    if beta.ndim != 2 or beta.shape[1] != nt or theta.shape != beta.shape or phi.shape != beta.shape:
        raise DimensionError(
            f"beta/theta/phi must all be (P, {nt}); got {beta.shape}, {theta.shape}, {phi.shape}"
        )
    steer = steering_phase(params.geometry, theta, phi)  # (P, Nt, Nr)
    H = np.einsum("pt,ptl->tl", beta, steer)
    phases = steer[0] if beta.shape[0] == 1 else None
    return ChannelRealization(H=H, structured=params, phases=phases)


def random_structured_params(
    nt: int, geometry: ArrayGeometry, rng: SeededRng, rays: int = 1
) -> StructuredChannelParams:
    """Draw gains ~ CN(0, 1/P) and angles theta ~ U[0, pi), phi ~ U[0, 2 pi)."""
    beta = rng.complex_gaussian((rays, nt), 1.0 / rays)
    theta = rng.uniform((rays, nt), 0.0, np.pi)
    phi = rng.uniform((rays, nt), 0.0, 2 * np.pi)
    return StructuredChannelParams(beta=beta, theta=theta, phi=phi, geometry=geometry)


def check_unit_modulus(phases: np.ndarray, tol: float = PHASE_TOL) -> None:
    dev = np.max(np.abs(np.abs(phases) - 1.0), initial=0.0)
    if dev > tol:
        raise ConfigError(f"steering phases must have unit modulus (max deviation {dev:.3g})")


def remove_phases(H: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """Per-element path gains ``H / phases``, computed as ``H * conj(phases)``."""
    H = np.asarray(H)
    phases = np.asarray(phases)
    if H.shape != phases.shape:
        raise DimensionError(f"H {H.shape} and phases {phases.shape} differ in shape")
    check_unit_modulus(phases)
    return H * np.conj(phases)


def apply_phases(beta: np.ndarray, phases: Sequence) -> np.ndarray:
    return np.asarray(beta) * np.asarray(phases)
