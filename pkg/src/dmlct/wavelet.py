"""2D discrete wavelet transform with symmetric (half-sample) boundary extension.

The filter bank is built from scratch: Daubechies filters come from spectral
factorization of the maxflat half-band polynomial, and the analysis/synthesis
steps are plain strided convolutions. Coefficient layout and lengths follow the
common ``wavedec2`` convention so results can be cross-checked elementwise
against other wavelet libraries.
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass

import numpy as np


class WaveletError(ValueError):
    """Structural or parameter problem with a wavelet decomposition."""


class DecompositionDepthError(WaveletError):
    pass


@dataclass(frozen=True)
class FilterBank:
    name: str
    dec_lo: np.ndarray
    dec_hi: np.ndarray
    rec_lo: np.ndarray
    rec_hi: np.ndarray

    @property
    def length(self) -> int:
        return len(self.dec_lo)


def _daubechies_scaling(order: int) -> np.ndarray:
    # Minimum-phase spectral factor of the maxflat half-band filter:
    # P(y) = sum_k C(N-1+k, k) y^k with y = (2 - z - 1/z) / 4.
    zy = np.array([-0.25, 0.5, -0.25])  # z * y(z)
    poly = np.zeros(2 * order - 1)
    for k in range(order):
        term = math.comb(order - 1 + k, k) * np.append(_polypow(zy, k), np.zeros(order - 1 - k))
        poly = np.polyadd(poly, term)
    roots = np.roots(poly) if order > 1 else np.array([])
    h = np.real(np.poly(np.concatenate([-np.ones(order), roots[np.abs(roots) < 1.0]])))
    h = h / h.sum() * math.sqrt(2.0)
    return h


def _polypow(p: np.ndarray, k: int) -> np.ndarray:
    out = np.array([1.0])
    for _ in range(k):
        out = np.polymul(out, p)
    return out


@functools.lru_cache(maxsize=None)
def get_filter_bank(name: str) -> FilterBank:
    """Return the analysis/synthesis filters for ``"haar"`` or ``"db1"`` .. ``"db10"``."""
    key = name.lower()
    if key == "haar":
        order = 1
    else:
        m = re.fullmatch(r"db(\d+)", key)
        if m is None or not 1 <= int(m.group(1)) <= 10:
            raise WaveletError(f"unknown wavelet filter {name!r}")
        order = int(m.group(1))
    rec_lo = _daubechies_scaling(order)
    dec_lo = rec_lo[::-1].copy()
    signs = np.where(np.arange(len(rec_lo)) % 2 == 0, 1.0, -1.0)
    rec_hi = signs * dec_lo
    dec_hi = rec_hi[::-1].copy()
    for arr in (dec_lo, dec_hi, rec_lo, rec_hi):
        arr.setflags(write=False)
    return FilterBank(key, dec_lo, dec_hi, rec_lo, rec_hi)


def _analysis(x: np.ndarray, filt: np.ndarray, axis: int) -> np.ndarray:
    # y[i] = sum_j f[j] x[2i + 1 - j], x symmetrically extended by L - 1 on both sides
    L = len(filt)
    n_out = (x.shape[axis] + L - 1) // 2
    pad = [(0, 0)] * x.ndim
    pad[axis] = (L - 1, L - 1)
    xe = np.moveaxis(np.pad(x, pad, mode="symmetric"), axis, -1)
    out = np.zeros(xe.shape[:-1] + (n_out,), dtype=np.result_type(x, np.float64))
    for j, f in enumerate(filt):
        out += f * xe[..., L - j: L - j + 2 * n_out: 2]
    return np.moveaxis(out, -1, axis)


def _synthesis(lo: np.ndarray, hi: np.ndarray, fb: FilterBank, axis: int) -> np.ndarray:
    L = fb.length
    n = lo.shape[axis]
    n_out = 2 * n - L + 2
    lo_m = np.moveaxis(lo, axis, -1)
    hi_m = np.moveaxis(hi, axis, -1)
    up_shape = lo_m.shape[:-1] + (2 * n,)
    full = np.zeros(lo_m.shape[:-1] + (2 * n + L - 1,), dtype=np.result_type(lo, hi, np.float64))
    up_lo = np.zeros(up_shape, dtype=full.dtype)
    up_hi = np.zeros(up_shape, dtype=full.dtype)
    up_lo[..., ::2] = lo_m
    up_hi[..., ::2] = hi_m
    for j in range(L):
        full[..., j: j + 2 * n] += fb.rec_lo[j] * up_lo + fb.rec_hi[j] * up_hi
    out = full[..., L - 2: L - 2 + n_out]
    return np.moveaxis(out, -1, axis)


def _dwt2(x: np.ndarray, fb: FilterBank):
    lo = _analysis(x, fb.dec_lo, 0)
    hi = _analysis(x, fb.dec_hi, 0)
    approx = _analysis(lo, fb.dec_lo, 1)
    horizontal = _analysis(hi, fb.dec_lo, 1)
    vertical = _analysis(lo, fb.dec_hi, 1)
    diagonal = _analysis(hi, fb.dec_hi, 1)
    return approx, (horizontal, vertical, diagonal)


def _idwt2(approx: np.ndarray, details, fb: FilterBank) -> np.ndarray:
    horizontal, vertical, diagonal = details
    lo = _synthesis(approx, vertical, fb, 1)
    hi = _synthesis(horizontal, diagonal, fb, 1)
    return _synthesis(lo, hi, fb, 0)


@dataclass
class WaveletBands:
    """Multi-level coefficient pyramid of a 2D image.

    ``details`` is ordered coarsest level first; each entry is the
    (horizontal, vertical, diagonal) triple of that level.
    """

    approx: np.ndarray
    details: list
    level: int
    filter_name: str
    original_shape: tuple

    def copy(self) -> "WaveletBands":
        return WaveletBands(
            self.approx.copy(),
            [tuple(d.copy() for d in triple) for triple in self.details],
            self.level,
            self.filter_name,
            tuple(self.original_shape),
        )

    def validate(self) -> None:
        if len(self.details) != self.level:
            raise WaveletError(f"expected {self.level} detail levels, got {len(self.details)}")
        expected = expected_band_shapes(self.original_shape, self.level, self.filter_name)
        if self.approx.shape != expected[0]:
            raise WaveletError(f"approx band shape {self.approx.shape} != expected {expected[0]}")
        for i, (triple, shape) in enumerate(zip(self.details, expected)):
            if len(triple) != 3:
                raise WaveletError(f"detail level {i} must hold 3 bands")
            for band in triple:
                if band.shape != shape:
                    raise WaveletError(f"detail level {i} band shape {band.shape} != expected {shape}")


def expected_band_shapes(shape, level: int, filter_name: str) -> list:
    """Band shapes per level, coarsest first, for an image of ``shape``."""
    L = get_filter_bank(filter_name).length
    rows, cols = shape
    shapes = []
    for _ in range(level):
        rows, cols = (rows + L - 1) // 2, (cols + L - 1) // 2
        shapes.append((rows, cols))
    return shapes[::-1]


def _check_depth(shape, level: int, fb: FilterBank) -> None:
    if level < 1:
        raise WaveletError(f"decomposition level must be >= 1, got {level}")
    rows, cols = shape
    for lev in range(1, level + 1):
        if min(rows, cols) < fb.length:
            raise DecompositionDepthError(
                f"decomposition depth {level} too deep for image {tuple(shape)} with {fb.name}: "
                f"level {lev} input is {rows}x{cols}, filter support is {fb.length}"
            )
        rows, cols = (rows + fb.length - 1) // 2, (cols + fb.length - 1) // 2


def max_level(shape, filter_name: str) -> int:
    """Deepest level accepted by :func:`decompose` for an image of ``shape``."""
    fb = get_filter_bank(filter_name)
    rows, cols = shape
    lev = 0
    while min(rows, cols) >= fb.length:
        lev += 1
        rows, cols = (rows + fb.length - 1) // 2, (cols + fb.length - 1) // 2
    return lev


def decompose(image, level: int, filter_name: str = "db3") -> WaveletBands:
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 2:
        raise WaveletError(f"expected a 2D image, got shape {x.shape}")
    fb = get_filter_bank(filter_name)
    _check_depth(x.shape, level, fb)
    details = []
    approx = x
    for _ in range(level):
        approx, triple = _dwt2(approx, fb)
        details.append(triple)
    return WaveletBands(approx, details[::-1], level, fb.name, tuple(x.shape))


def recompose(bands: WaveletBands) -> np.ndarray:
    bands.validate()
    fb = get_filter_bank(bands.filter_name)
    a = bands.approx
    for triple in bands.details:
        rows, cols = triple[0].shape
        # odd-length levels reconstruct one sample too many
        a = _idwt2(a[:rows, :cols], triple, fb)
    rows, cols = bands.original_shape
    return a[:rows, :cols]


def high_freq(image, level: int, filter_name: str = "db3") -> np.ndarray:
    """Image reconstructed with the coarsest approximation band set to zero."""
    bands = decompose(image, level, filter_name)
    bands.approx = np.zeros_like(bands.approx)
    return recompose(bands)


def low_freq(image, level: int, filter_name: str = "db3") -> np.ndarray:
    """Image reconstructed from the coarsest approximation band alone."""
    bands = decompose(image, level, filter_name)
    bands.details = [tuple(np.zeros_like(b) for b in triple) for triple in bands.details]
    return recompose(bands)


def split_bands(image, level: int, filter_name: str = "db3"):
    """Return ``(high_freq, low_freq)`` from a single decomposition."""
    bands = decompose(image, level, filter_name)
    lf_bands = bands.copy()
    lf_bands.details = [tuple(np.zeros_like(b) for b in triple) for triple in bands.details]
    bands.approx = np.zeros_like(bands.approx)
    return recompose(bands), recompose(lf_bands)
