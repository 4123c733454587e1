"""Fourth-order cumulant features and the nearest-theory classifier.

Empirical cumulants of a received frame y:

    C20 = <y^2>            C21 = <|y|^2>
    C40 = <y^4> - 3 C20^2   C41 = <y^3 y*> - 3 C20 C21
    C42 = <|y|^4> - |C20|^2 - 2 C21^2

Classification compares the amplitude-free pair (C40 / C21^2, C42 / C21^2)
against the exact expectations of each unit-energy constellation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .modem import ModulationScheme, SymbolFrame, constellation


@dataclass(frozen=True)
class CumulantVector:
    c20: complex
    c21: complex
    c40: complex
    c41: complex
    c42: complex

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=complex)


def _cumulants(y: np.ndarray) -> CumulantVector:
    y2 = y * y
    p = (y * np.conj(y)).real
    c20 = y2.mean()
    c21 = p.mean()
    c40 = (y2 * y2).mean() - 3 * c20**2
    c41 = (y2 * p).mean() - 3 * c20 * c21
    c42 = (p * p).mean() - abs(c20) ** 2 - 2 * c21**2
    return CumulantVector(complex(c20), complex(c21), complex(c40), complex(c41), complex(c42))


def empirical_cumulants(frame) -> CumulantVector:
    """Sample cumulants of a frame (a :class:`SymbolFrame` or complex array)."""
    y = frame.samples if isinstance(frame, SymbolFrame) else np.asarray(frame, dtype=complex)
    if y.size == 0:
        raise InvalidArgumentError("cumulants need at least one sample")
    return _cumulants(y)


def theoretical_cumulants(scheme: ModulationScheme) -> CumulantVector:
    """Exact expectations, averaging over the constellation points."""
    return _cumulants(constellation(scheme))


def _features(c: CumulantVector) -> np.ndarray:
    power = c.c21.real
    if power <= 0:
        raise DegenerateInputError("frame has zero power; C21 = 0")
    c40 = c.c40 / power**2
    return np.array([c40.real, c40.imag, c.c42.real / power**2])


_THEORY = {s: _features(theoretical_cumulants(s)) for s in ModulationScheme}


def classify_hoc(frame, schemes=tuple(ModulationScheme)):
    """Nearest theoretical cumulant vector.

    Returns ``(scheme, {scheme: distance})``; ties go to the earlier scheme.
    """
    feat = _features(empirical_cumulants(frame))
    distances = {s: float(np.linalg.norm(feat - _THEORY[s])) for s in schemes}
    best = min(schemes, key=lambda s: (distances[s], int(s)))
    return best, distances


def classify_hoc_batch(y: np.ndarray, schemes=tuple(ModulationScheme)) -> np.ndarray:
    """Vectorized :func:`classify_hoc` over complex frames shaped (B, L); returns class indices."""
    y = np.asarray(y, dtype=complex)
    y2 = y * y
    p = (y * np.conj(y)).real
    c20 = y2.mean(axis=1)
    c21 = p.mean(axis=1)
    if np.any(c21 <= 0):
        raise DegenerateInputError("frame has zero power; C21 = 0")
    c40 = ((y2 * y2).mean(axis=1) - 3 * c20**2) / c21**2
    c42 = ((p * p).mean(axis=1) - np.abs(c20) ** 2 - 2 * c21**2) / c21**2
    feat = np.stack([c40.real, c40.imag, c42], axis=1)
    theory = np.stack([_THEORY[s] for s in schemes])
    dist = np.linalg.norm(feat[:, None, :] - theory[None, :, :], axis=2)
    # argmin returns the first minimum, which is the enumeration-order tie break
    return np.array([int(s) for s in schemes])[dist.argmin(axis=1)]


def cumulant_table_csv() -> str:
    """Theoretical C20..C42 of every scheme as CSV (real and imaginary parts)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    names = ["c20", "c21", "c40", "c41", "c42"]
    writer.writerow(["scheme"] + [f"{n}_{part}" for n in names for part in ("re", "im")])
    for scheme in ModulationScheme:
        c = theoretical_cumulants(scheme)
        row = [scheme.label]
        for value in astuple(c):
            row += [f"{value.real:.12g}", f"{_clean(value.imag):.12g}"]
        writer.writerow(row)
    return out.getvalue()


def _clean(x: float, tol: float = 1e-12) -> float:
    return 0.0 if abs(x) < tol else x
