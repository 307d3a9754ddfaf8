"""CT slices in HU: storage format, synthetic LDCT/HDCT phantoms, training crops."""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .wavelet import split_bands

DOMAIN_TAGS = ("ldct", "hdct", "output", "clean")
HU_MIN_SANE = -1100.0
HU_MAX_SANE = 4000.0


class CtFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class CtImage:
    pixels: np.ndarray
    id: str = ""
    domain_tag: str = "ldct"
    spacing: tuple | None = None
    provenance: tuple = ()

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ValueError(f"CtImage pixels must be 2D, got shape {self.pixels.shape}")
        if not np.isfinite(self.pixels).all():
            raise ValueError(f"CtImage {self.id!r} has non-finite pixels")
        if self.domain_tag not in DOMAIN_TAGS:
            raise ValueError(f"unknown domain tag {self.domain_tag!r}")

    @property
    def shape(self) -> tuple:
        return self.pixels.shape

    def hu_range_report(self) -> dict:
        """Counts of pixels outside the sane HU range; values are never clipped."""
        below = int((self.pixels < HU_MIN_SANE).sum())
        above = int((self.pixels > HU_MAX_SANE).sum())
        return {"below": below, "above": above, "ok": below == 0 and above == 0}


# -- storage --------------------------------------------------------------------

_HEADER = struct.Struct("<4sHHff")
MAGIC = b"CTHU"


def encode_slice(pixels: np.ndarray) -> bytes:
    hu = np.asarray(pixels, dtype=np.float64)
    rows, cols = hu.shape
    if rows > 0xFFFF or cols > 0xFFFF:
        raise ValueError(f"image {rows}x{cols} too large for the CTHU header")
    lo = math.floor(hu.min())
    span = hu.max() - lo
    slope = 1.0 if span <= 65535 else float(np.float32(span / 65535.0 * (1 + 1e-6)))
    intercept = float(np.float32(lo))
    raw = np.clip(np.rint((hu - intercept) / slope), 0, 65535).astype("<u2")
    return _HEADER.pack(MAGIC, rows, cols, slope, intercept) + raw.tobytes()


def decode_slice(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise CtFormatError(f"truncated header: {len(buf)} of {_HEADER.size} bytes", len(buf))
    magic, rows, cols, slope, intercept = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CtFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    need = _HEADER.size + 2 * rows * cols
    if len(buf) < need:
        raise CtFormatError(f"truncated pixel data: {len(buf)} of {need} bytes", len(buf))
    if len(buf) > need:
        raise CtFormatError(f"{len(buf) - need} trailing bytes after pixel data", need)
    raw = np.frombuffer(buf, dtype="<u2", count=rows * cols, offset=_HEADER.size).reshape(rows, cols)
    return float(slope) * raw.astype(np.float64) + float(intercept)


def save_slice(img: CtImage, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_slice(img.pixels))
    os.replace(tmp, path)


def load_slice(path, domain_tag: str = "ldct") -> CtImage:
    path = Path(path)
    pixels = decode_slice(path.read_bytes())
    return CtImage(pixels, id=path.stem, domain_tag=domain_tag, provenance=(f"load_slice({path.name})",))


def write_manifest(path, entries) -> None:
    """``entries``: iterable of (relative path, domain tag)."""
    lines = []
    for rel, tag in entries:
        if tag not in DOMAIN_TAGS:
            raise ValueError(f"unknown domain tag {tag!r}")
        lines.append(f"{rel}\t{tag}\n")
    Path(path).write_text("".join(lines))


def read_manifest(path) -> list[tuple[str, str]]:
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in DOMAIN_TAGS:
            raise ValueError(f"{path}:{lineno}: malformed manifest line {line!r}")
        entries.append((parts[0], parts[1]))
    return entries


def load_dir(directory, domain_tag: str = "ldct") -> list[CtImage]:
    files = sorted(Path(directory).glob("*.cthu"))
    return [load_slice(f, domain_tag) for f in files]


# -- synthetic phantoms -----------------------------------------------------------

SHAPES = ("disk", "ring", "bar")


@dataclass(frozen=True)
class Structure:
    """``dims`` is (radius,) for disk, (outer, inner) for ring, (half_h, half_w) for bar."""

    shape: str
    center: tuple
    dims: tuple
    hu_value: float

    def extent(self) -> float:
        if self.shape == "bar":
            return float(max(self.dims))
        return float(self.dims[0])


def default_structures(size: int) -> tuple:
    c = size / 2
    s = size
    return (
        Structure("disk", (c, c), (0.37 * s,), 35.0),          # brain
        Structure("ring", (c, c), (0.42 * s, 0.37 * s), 900.0),  # skull
        Structure("disk", (c - 0.12 * s, c + 0.14 * s), (0.06 * s,), -800.0),  # air cavity
        Structure("bar", (c + 0.15 * s, c - 0.10 * s), (0.03 * s, 0.10 * s), 1200.0),  # petrous bone
        Structure("disk", (c + 0.02 * s, c - 0.02 * s), (0.07 * s,), 60.0),  # soft tissue
    )


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 128
    structures: tuple = ()
    noise_sigma_ld: float = 60.0
    noise_sigma_hd: float = 10.0
    domain_mean_shift: float = 0.0
    seed: int = 0
    background_hu: float = -1000.0
    shift_jitter_px: float = 4.0
    scale_jitter: float = 0.05

    def __post_init__(self):
        if self.size < 8:
            raise ValueError(f"phantom size must be >= 8, got {self.size}")
        if not self.structures:
            object.__setattr__(self, "structures", default_structures(self.size))
        if self.noise_sigma_ld < 0 or self.noise_sigma_hd < 0:
            raise ValueError("noise sigmas must be >= 0")
        for s in self.structures:
            if s.shape not in SHAPES:
                raise ValueError(f"unknown structure shape {s.shape!r}")
            reach = s.extent() * (1 + self.scale_jitter) + self.shift_jitter_px
            # distance of the scaled center from the image center also grows with scale
            off = max(abs(s.center[0] - self.size / 2), abs(s.center[1] - self.size / 2)) * self.scale_jitter
            cy, cx = s.center
            if min(cy, cx) - reach - off < 0 or max(cy, cx) + reach + off > self.size:
                raise ValueError(f"structure {s} does not fit inside a {self.size}x{self.size} image")


def render_structures(size: int, structures, background_hu: float, shift=(0.0, 0.0), scale: float = 1.0) -> np.ndarray:
    """Paint structures in order (later ones overwrite) after a global shift/scale about the center."""
    img = np.full((size, size), float(background_hu))
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    mid = size / 2
    for s in structures:
        cy = mid + (s.center[0] - mid) * scale + shift[0]
        cx = mid + (s.center[1] - mid) * scale + shift[1]
        dims = [d * scale for d in s.dims]
        if s.shape == "disk":
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= dims[0] ** 2
        elif s.shape == "ring":
            r2 = (yy - cy) ** 2 + (xx - cx) ** 2
            mask = (r2 <= dims[0] ** 2) & (r2 > dims[1] ** 2)
        else:
            mask = (np.abs(yy - cy) <= dims[0]) & (np.abs(xx - cx) <= dims[1])
        img[mask] = s.hu_value
    return img


def _phantom(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    shift = rng.uniform(-spec.shift_jitter_px, spec.shift_jitter_px, size=2)
    scale = rng.uniform(1 - spec.scale_jitter, 1 + spec.scale_jitter)
    return render_structures(spec.size, spec.structures, spec.background_hu, tuple(shift), scale)


@dataclass
class PhantomSet:
    ldct: list = field(default_factory=list)
    hdct: list = field(default_factory=list)
    clean_ld: list = field(default_factory=list)
    clean_hd: list = field(default_factory=list)


def make_phantom_pair(spec: PhantomSpec, n_ld: int, n_hd: int) -> PhantomSet:
    """Unpaired LDCT and HDCT phantom sets with their noise-free counterparts.

    Each image gets its own random anatomy placement. The HDCT clean images
    include ``domain_mean_shift``. Image ``i`` of a domain depends only on
    ``(seed, domain, i)``.
    """
    out = PhantomSet()
    for domain, n, sigma, offset in (("ldct", n_ld, spec.noise_sigma_ld, 0.0),
                                     ("hdct", n_hd, spec.noise_sigma_hd, spec.domain_mean_shift)):
        code = 0 if domain == "ldct" else 1
        for i in range(n):
            rng = np.random.default_rng([spec.seed, code, i])
            clean = _phantom(spec, rng) + offset
            noisy = clean + rng.normal(0.0, sigma, size=clean.shape) if sigma > 0 else clean.copy()
            prefix = "ld" if domain == "ldct" else "hd"
            note = (f"phantom(seed={spec.seed}, domain={domain}, index={i})",)
            getattr(out, domain).append(CtImage(noisy, f"{prefix}_{i:04d}", domain, provenance=note))
            target = out.clean_ld if domain == "ldct" else out.clean_hd
            target.append(CtImage(clean, f"{prefix}_{i:04d}", "clean", provenance=note))
    return out


# -- crops ------------------------------------------------------------------------

def _pixels(img) -> np.ndarray:
    return img.pixels if isinstance(img, CtImage) else np.asarray(img, dtype=np.float64)


def crop_origin(shape, size: int, rng: np.random.Generator) -> tuple[int, int]:
    h, w = shape
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} smaller than crop size {size}")
    return int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1))


def random_crop(img, size: int, rng: np.random.Generator) -> np.ndarray:
    px = _pixels(img)
    r, c = crop_origin(px.shape, size, rng)
    return px[r:r + size, c:c + size].copy()


def split_slice(img, cfg) -> tuple[np.ndarray, np.ndarray]:
    """Full-slice (high_freq, low_freq) split with the configured wavelet."""
    return split_bands(_pixels(img), cfg.wavelet_level, cfg.filter_name)


def prepare_hf_crop(img, cfg, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Split the whole slice first, then crop HF and LF at the same position.

    Returns ``(hf_crop / cfg.hf_scale, lf_crop)``.
    """
    hf, lf = split_slice(img, cfg)
    r, c = crop_origin(hf.shape, cfg.crop, rng)
    win = (slice(r, r + cfg.crop), slice(c, c + cfg.crop))
    return hf[win] / cfg.hf_scale, lf[win].copy()
