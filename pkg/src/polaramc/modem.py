"""Symbol generation and the flat-fading + AWGN channel.

Received samples follow

    y(n) = a * exp(j(2*pi*f0*n + theta0)) * s(n) + g(n),   n = 1..L

where ``g`` is circular complex Gaussian noise whose total variance is
``10**(-snr_db/10)`` relative to the unit-energy constellation.
"""

from __future__ import annotations

import csv
import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "ModulationScheme",
    "SymbolFrame",
    "ChannelParams",
    "FadingDistribution",
    "NOISELESS",
    "constellation",
    "generate_frame",
    "apply_channel",
    "sample_fading",
    "write_frame",
    "read_frame",
    "frame_to_csv",
]

# Sentinel SNR meaning "add no noise at all".
NOISELESS = math.inf


class ModulationScheme(enum.IntEnum):
    QPSK = 0
    PSK8 = 1
    QAM16 = 2
    QAM64 = 3

    @property
    def order(self) -> int:
        return (4, 8, 16, 64)[self.value]

    @property
    def label(self) -> str:
        return ("QPSK", "8PSK", "16QAM", "64QAM")[self.value]

    @classmethod
    def parse(cls, text: str) -> "ModulationScheme":
        key = text.strip().upper()
        for scheme in cls:
            if key in (scheme.label, scheme.name):
                return scheme
        raise InvalidArgumentError(f"unknown modulation scheme {text!r}")


def _psk(m: int, offset: float) -> np.ndarray:
    k = np.arange(m)
    return np.exp(1j * (2 * np.pi * k / m + offset))


def _square_qam(m: int) -> np.ndarray:
    side = int(round(math.sqrt(m)))
    levels = np.arange(-(side - 1), side, 2, dtype=float)
    grid = levels[:, None] + 1j * levels[None, :]
    points = grid.ravel()
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


_CONSTELLATIONS = {
    ModulationScheme.QPSK: _psk(4, np.pi / 4),
    ModulationScheme.PSK8: _psk(8, 0.0),
    ModulationScheme.QAM16: _square_qam(16),
    ModulationScheme.QAM64: _square_qam(64),
}


def constellation(scheme: ModulationScheme) -> np.ndarray:
    """Unit average energy constellation points of ``scheme`` (a copy)."""
    return _CONSTELLATIONS[ModulationScheme(scheme)].copy()


@dataclass
class SymbolFrame:
    samples: np.ndarray
    scheme: ModulationScheme

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise InvalidArgumentError("a frame needs at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidArgumentError("frame samples must be finite")
        self.scheme = ModulationScheme(self.scheme)

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class ChannelParams:
    amplitude: float = 1.0
    freq_offset: float = 0.0
    phase_offset: float = 0.0
    snr_db: float = NOISELESS

    def __post_init__(self):
        if not self.amplitude > 0:
            raise InvalidArgumentError("amplitude must be positive")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise InvalidArgumentError("snr_db must be finite or NOISELESS")

    @property
    def noiseless(self) -> bool:
        return self.snr_db == NOISELESS

    def with_snr(self, snr_db: float) -> "ChannelParams":
        return ChannelParams(self.amplitude, self.freq_offset, self.phase_offset, snr_db)


@dataclass(frozen=True)
class FadingDistribution:
    """Block fading: one uniform amplitude and one uniform phase per frame."""

    a_min: float = 0.5
    a_max: float = 2.0
    phase_range: tuple = field(default=(-math.pi, math.pi), init=False)

    def __post_init__(self):
        if not 0 < self.a_min <= self.a_max:
            raise InvalidArgumentError("need 0 < a_min <= a_max")


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def generate_frame(scheme: ModulationScheme, length: int, seed=None) -> SymbolFrame:
    """Draw ``length`` i.i.d. uniform symbols from the constellation of ``scheme``."""
    if length < 1:
        raise InvalidArgumentError("frame length must be >= 1")
    points = _CONSTELLATIONS[ModulationScheme(scheme)]
    idx = _rng(seed).integers(0, points.size, size=length)
    return SymbolFrame(points[idx], scheme)


def apply_channel(frame: SymbolFrame, params: ChannelParams, seed=None) -> SymbolFrame:
    n = np.arange(1, len(frame) + 1)
    y = frame.samples
    if params.freq_offset != 0.0:
        y = params.amplitude * np.exp(1j * (2 * np.pi * params.freq_offset * n + params.phase_offset)) * y
    elif params.amplitude != 1.0 or params.phase_offset != 0.0:
        # cos/sin of pi is not exactly -1/0; build the gain from the exact
        # rotation where possible so that theta0 = pi gives -a*s exactly.
        y = params.amplitude * _unit_phasor(params.phase_offset) * y
    else:
        y = y.copy()
    if not params.noiseless:
        sigma = math.sqrt(10.0 ** (-params.snr_db / 10.0) / 2.0)
        noise = _rng(seed).standard_normal((2, y.size))
        y = y + sigma * (noise[0] + 1j * noise[1])
    return SymbolFrame(y, frame.scheme)


def _unit_phasor(theta: float) -> complex:
    exact = {0.0: 1.0, math.pi: -1.0, -math.pi: -1.0, math.pi / 2: 1j, -math.pi / 2: -1j}
    if theta in exact:
        return complex(exact[theta])
    return complex(math.cos(theta), math.sin(theta))


def sample_fading(dist: FadingDistribution, seed=None, snr_db: float = NOISELESS) -> ChannelParams:
    rng = _rng(seed)
    a = rng.uniform(dist.a_min, dist.a_max) if dist.a_max > dist.a_min else dist.a_min
    theta0 = rng.uniform(-math.pi, math.pi)
    return ChannelParams(amplitude=float(a), freq_offset=0.0, phase_offset=float(theta0), snr_db=snr_db)


# Binary layout: little-endian {scheme: u8, L: u32} then 2L float64 (I, Q interleaved).
_HEADER = struct.Struct("<BI")


def write_frame(frame: SymbolFrame, path) -> None:
    iq = np.empty(2 * len(frame), dtype="<f8")
    iq[0::2] = frame.samples.real
    iq[1::2] = frame.samples.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(int(frame.scheme), len(frame)))
        fh.write(iq.tobytes())


def read_frame(path) -> SymbolFrame:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InvalidArgumentError(f"{path}: truncated frame header")
    scheme, length = _HEADER.unpack_from(raw)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != 2 * length:
        raise InvalidArgumentError(f"{path}: expected {2 * length} floats, found {body.size}")
    return SymbolFrame(body[0::2] + 1j * body[1::2], ModulationScheme(scheme))


def frame_to_csv(frame: SymbolFrame, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "I", "Q"])
        for n, y in enumerate(frame.samples, start=1):
            writer.writerow([n, repr(float(y.real)), repr(float(y.imag))])
