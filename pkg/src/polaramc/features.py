"""Polar transform and constellation rasterizers.

Image arrays are indexed ``[axis-1 bin, axis-2 bin]``; for polar grids that is
``[r bin, theta bin]`` so a common phase rotation shifts columns. PGM export
transposes to put axis 2 (theta) on rows and axis 1 (r) on columns.

Two rasterizers share one grid convention:

* hard: plain 2-D histogram, bins half-open ``[edge_i, edge_i+1)`` with the
  last bin closed; samples outside the grid are dropped.
* soft: each in-range sample splats unit mass bilinearly over the (up to) four
  nearest bin centres. The theta axis wraps; along a non-wrapping axis the
  outer half-bins clamp to the edge bin. Used on the differentiable CCN path.

Both are max-normalized to ``[0, 1]`` for the classifiers; raw counts/mass are
kept alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .modem import ModulationScheme, SymbolFrame


@dataclass
class PolarFrame:
    r: np.ndarray
    theta: np.ndarray
    scheme: ModulationScheme = ModulationScheme.QPSK

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        if self.r.shape != self.theta.shape or self.r.ndim != 1:
            raise InvalidArgumentError("r and theta must be 1-D and of equal length")
        if not (np.all(np.isfinite(self.r)) and np.all(self.r >= 0)):
            raise InvalidArgumentError("radii must be finite and non-negative")
        if np.any(np.abs(self.theta) > math.pi):
            raise InvalidArgumentError("theta must lie in [-pi, pi]")

    def __len__(self):
        return self.r.size


@dataclass(frozen=True)
class GridSpec:
    lo1: float
    hi1: float
    lo2: float
    hi2: float
    rows: int
    cols: int
    wrap2: bool = False  # axis 2 is periodic (theta)

    def __post_init__(self):
        if not (self.lo1 < self.hi1 and self.lo2 < self.hi2):
            raise InvalidArgumentError("grid ranges need lo < hi")
        if self.rows < 1 or self.cols < 1:
            raise InvalidArgumentError("grid resolution must be >= 1")

    @property
    def shape(self):
        return (self.rows, self.cols)


POLAR_GRID = GridSpec(0.0, 3.0, -math.pi, math.pi, 36, 36, wrap2=True)
IQ_GRID = GridSpec(-3.5, 3.5, -3.5, 3.5, 64, 64)
CCN_INPUT_GRID = GridSpec(0.0, 6.0, -math.pi, math.pi, 16, 16, wrap2=True)


def polar_grid(resolution: int = 36) -> GridSpec:
    return GridSpec(0.0, 3.0, -math.pi, math.pi, resolution, resolution, wrap2=True)


def iq_grid(resolution: int = 64) -> GridSpec:
    return GridSpec(-3.5, 3.5, -3.5, 3.5, resolution, resolution)


@dataclass
class ConstellationImage:
    grid: np.ndarray  # max-normalized
    mass: np.ndarray  # raw counts (hard) or splatted mass (soft)
    spec: GridSpec
    in_range_count: int


def to_polar(frame: SymbolFrame) -> PolarFrame:
    r, theta = polar_components(frame.samples)
    return PolarFrame(r, theta, frame.scheme)


def polar_components(y: np.ndarray):
    """Radius and four-quadrant angle of complex samples (any shape)."""
    y = np.asarray(y)
    # atan2(+-0, +-0) is 0 or +-pi depending on signed zeros; pin it to 0.
    theta = np.arctan2(y.imag, y.real)
    theta = np.where((y.real == 0) & (y.imag == 0), 0.0, theta)
    return np.abs(y), theta


def from_polar(polar: PolarFrame) -> SymbolFrame:
    return SymbolFrame(polar.r * np.cos(polar.theta) + 1j * polar.r * np.sin(polar.theta), polar.scheme)


def wrap_angle(theta):
    """Map angles onto [-pi, pi]; values already inside are returned unchanged."""
    theta = np.asarray(theta, dtype=float)
    inside = np.abs(theta) <= math.pi
    wrapped = np.mod(theta + math.pi, 2 * math.pi) - math.pi
    return np.where(inside, theta, wrapped)


# --------------------------------------------------------------------------
# hard binning


def _bin_index(x, lo, hi, n):
    idx = np.floor((x - lo) * (n / (hi - lo))).astype(np.int64)
    idx = np.where(x == hi, n - 1, idx)
    inside = (x >= lo) & (x <= hi)
    return np.clip(idx, 0, n - 1), inside


def hard_histogram(u: np.ndarray, v: np.ndarray, spec: GridSpec):
    """Counts of (u, v) pairs on ``spec``; u, v shaped (B, L).

    Returns ``(counts[B, rows, cols], in_range[B])``.
    """
    u = np.atleast_2d(u)
    v = np.atleast_2d(v)
    batch = u.shape[0]
    i, ok1 = _bin_index(u, spec.lo1, spec.hi1, spec.rows)
    j, ok2 = _bin_index(v, spec.lo2, spec.hi2, spec.cols)
    ok = ok1 & ok2
    cells = spec.rows * spec.cols
    flat = (np.arange(batch)[:, None] * cells + i * spec.cols + j)[ok]
    counts = np.bincount(flat, minlength=batch * cells).astype(float)
    return counts.reshape(batch, spec.rows, spec.cols), ok.sum(axis=1)


def max_normalize(mass: np.ndarray) -> np.ndarray:
    """Divide each image (last two axes) by its peak; all-zero images stay zero."""
    peak = mass.max(axis=(-2, -1), keepdims=True)
    return np.divide(mass, peak, out=np.zeros_like(mass), where=peak > 0)


def max_normalize_backward(mass: np.ndarray, grad: np.ndarray) -> np.ndarray:
    batch = mass.shape[0]
    flat = mass.reshape(batch, -1)
    g = grad.reshape(batch, -1)
    peak_idx = flat.argmax(axis=1)
    peak = flat[np.arange(batch), peak_idx]
    safe = np.where(peak > 0, peak, 1.0)
    out = g / safe[:, None]
    out[np.arange(batch), peak_idx] -= (g * flat).sum(axis=1) / safe**2
    out[peak == 0] = 0.0
    return out.reshape(mass.shape)


def _hard_image(u, v, spec) -> ConstellationImage:
    counts, n = hard_histogram(u[None, :], v[None, :], spec)
    return ConstellationImage(max_normalize(counts)[0], counts[0], spec, int(n[0]))


def rasterize_polar(polar: PolarFrame, spec: GridSpec = POLAR_GRID) -> ConstellationImage:
    return _hard_image(polar.r, polar.theta, spec)


def rasterize_iq(frame: SymbolFrame, spec: GridSpec = IQ_GRID) -> ConstellationImage:
    return _hard_image(frame.samples.real, frame.samples.imag, spec)


def polar_images(y: np.ndarray, spec: GridSpec = POLAR_GRID) -> np.ndarray:
    """Batch hard polar images from complex frames shaped (B, L)."""
    r, theta = polar_components(y)
    counts, _ = hard_histogram(r, theta, spec)
    return max_normalize(counts)


def iq_images(y: np.ndarray, spec: GridSpec = IQ_GRID) -> np.ndarray:
    counts, _ = hard_histogram(y.real, y.imag, spec)
    return max_normalize(counts)


# --------------------------------------------------------------------------
# soft (bilinear) splatting


@dataclass
class SplatCache:
    spec: GridSpec
    batch: int
    i0: np.ndarray
    j0: np.ndarray
    j1: np.ndarray
    fr: np.ndarray
    ft: np.ndarray
    dr: np.ndarray  # d(bin coordinate)/d(input), 0 where clamped or dropped
    dt: np.ndarray
    ok: np.ndarray


def _linear_axis(x, lo, hi, n):
    c = (x - lo) * (n / (hi - lo)) - 0.5
    slope = np.full_like(c, n / (hi - lo))
    clamped = (c < 0) | (c > n - 1)
    c = np.clip(c, 0.0, n - 1)
    slope[clamped] = 0.0
    i0 = np.minimum(np.floor(c).astype(np.int64), max(n - 2, 0))
    frac = c - i0
    if n == 1:
        frac = np.zeros_like(c)
        slope[:] = 0.0
    i1 = np.minimum(i0 + 1, n - 1)
    return i0, i1, frac, slope


def _circular_axis(x, lo, hi, n):
    c = (x - lo) * (n / (hi - lo)) - 0.5
    base = np.floor(c)
    frac = c - base
    i0 = np.mod(base.astype(np.int64), n)
    return i0, np.mod(i0 + 1, n), frac, np.full_like(c, n / (hi - lo))


def soft_splat(u: np.ndarray, v: np.ndarray, spec: GridSpec):
    """Bilinear splat of (u, v) pairs shaped (B, L); returns ``(mass, cache)``."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    batch = u.shape[0]
    ok = (u >= spec.lo1) & (u <= spec.hi1)
    if not spec.wrap2:
        ok &= (v >= spec.lo2) & (v <= spec.hi2)
    i0, i1, fr, dr = _linear_axis(u, spec.lo1, spec.hi1, spec.rows)
    if spec.wrap2:
        j0, j1, ft, dt = _circular_axis(v, spec.lo2, spec.hi2, spec.cols)
    else:
        j0, j1, ft, dt = _linear_axis(v, spec.lo2, spec.hi2, spec.cols)
    okf = ok.astype(float)
    dr = dr * okf
    dt = dt * okf
    cells = spec.rows * spec.cols
    base = np.arange(batch)[:, None] * cells
    idx = np.concatenate([(base + a * spec.cols + b).ravel() for a, b in ((i0, j0), (i1, j0), (i0, j1), (i1, j1))])
    w = np.concatenate([
        ((1 - fr) * (1 - ft) * okf).ravel(),
        (fr * (1 - ft) * okf).ravel(),
        ((1 - fr) * ft * okf).ravel(),
        (fr * ft * okf).ravel(),
    ])
    mass = np.bincount(idx, weights=w, minlength=batch * cells).reshape(batch, spec.rows, spec.cols)
    cache = SplatCache(spec, batch, i0, j0, j1, fr, ft, dr, dt, ok)
    return mass, cache


def soft_splat_backward(cache: SplatCache, grad_mass: np.ndarray):
    """Vector-Jacobian product: d(loss)/d(mass) -> (d/du, d/dv) per input pair."""
    spec = cache.spec
    g = grad_mass.reshape(cache.batch, -1)
    b = np.arange(cache.batch)[:, None]
    i1 = np.minimum(cache.i0 + 1, spec.rows - 1)
    g00 = g[b, cache.i0 * spec.cols + cache.j0]
    g10 = g[b, i1 * spec.cols + cache.j0]
    g01 = g[b, cache.i0 * spec.cols + cache.j1]
    g11 = g[b, i1 * spec.cols + cache.j1]
    fr, ft = cache.fr, cache.ft
    du = ((1 - ft) * (g10 - g00) + ft * (g11 - g01)) * cache.dr
    dv = ((1 - fr) * (g01 - g00) + fr * (g11 - g10)) * cache.dt
    return du, dv


def soft_rasterize_polar(polar: PolarFrame, spec: GridSpec = POLAR_GRID) -> ConstellationImage:
    mass, cache = soft_splat(polar.r[None, :], polar.theta[None, :], spec)
    return ConstellationImage(max_normalize(mass)[0], mass[0], spec, int(cache.ok.sum()))


def soft_rasterize_jacobian(polar: PolarFrame, spec: GridSpec = POLAR_GRID) -> np.ndarray:
    """Dense Jacobian of the raw splatted mass, shaped (rows, cols, N, 2).

    ``[..., n, 0]`` is the derivative w.r.t. r[n], ``[..., n, 1]`` w.r.t. theta[n].
    """
    _, c = soft_splat(polar.r[None, :], polar.theta[None, :], spec)
    n = len(polar)
    jac = np.zeros((spec.rows, spec.cols, n, 2))
    i0, j0, j1 = c.i0[0], c.j0[0], c.j1[0]
    i1 = np.minimum(i0 + 1, spec.rows - 1)
    fr, ft, dr, dt = c.fr[0], c.ft[0], c.dr[0], c.dt[0]
    k = np.arange(n)
    corners = (
        (i0, j0, -(1 - ft) * dr, -(1 - fr) * dt),
        (i1, j0, (1 - ft) * dr, -fr * dt),
        (i0, j1, -ft * dr, (1 - fr) * dt),
        (i1, j1, ft * dr, fr * dt),
    )
    for a, b, d_r, d_t in corners:
        np.add.at(jac, (a, b, k, 0), d_r)
        np.add.at(jac, (a, b, k, 1), d_t)
    return jac


# --------------------------------------------------------------------------
# export


def write_pgm(image, path) -> None:
    """8-bit binary PGM; rows follow axis 2 (theta), columns axis 1 (r)."""
    grid = image.grid if isinstance(image, ConstellationImage) else np.asarray(image)
    pixels = np.clip(np.rint(grid.T * 255.0), 0, 255).astype(np.uint8)
    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm`, returned in the internal orientation, scaled to [0, 1]."""
    with open(path, "rb") as fh:
        tokens = []
        while len(tokens) < 4:
            line = fh.readline()
            if not line.startswith(b"#"):
                tokens += line.split()
        if tokens[0] != b"P5":
            raise InvalidArgumentError(f"{path}: not a binary PGM")
        width, height = int(tokens[1]), int(tokens[2])
        pixels = np.frombuffer(fh.read(width * height), dtype=np.uint8).reshape(height, width)
    return pixels.T / 255.0


def write_image_blob(images: np.ndarray, path) -> None:
    np.ascontiguousarray(images, dtype="<f4").tofile(path)


def read_image_blob(path, shape, mmap: bool = True) -> np.ndarray:
    if mmap:
        return np.memmap(path, dtype="<f4", mode="r", shape=tuple(shape))
    return np.fromfile(path, dtype="<f4").reshape(shape)
