"""Image-quality metrics, HU region statistics, difference images and eval reports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .data import CtImage
from .wavelet import low_freq

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WIN = 7
SSIM_SIGMA = 1.5
DEFAULT_WINDOW = (-1024.0, 3071.0)


def _px(img) -> np.ndarray:
    return img.pixels if isinstance(img, CtImage) else np.asarray(img, dtype=np.float64)


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a, b, data_range: float) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    a, b = _px(a), _px(b)
    _same_shape(a, b)
    if not data_range > 0:
        raise ValueError("data_range must be > 0")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a, b, data_range: float, win: int = SSIM_WIN, sigma: float = SSIM_SIGMA,
             k1: float = SSIM_K1, k2: float = SSIM_K2) -> np.ndarray:
    """Local SSIM over every fully-contained Gaussian window ('valid' region)."""
    a, b = _px(a), _px(b)
    _same_shape(a, b)
    if min(a.shape) < win:
        raise ValueError(f"image {a.shape} smaller than the {win}x{win} SSIM window")
    kernel = gaussian_window(win, sigma)
    pad = win // 2
    crop = (slice(pad, a.shape[0] - pad), slice(pad, a.shape[1] - pad))

    def filt(x):
        return ndimage.correlate(x, kernel, mode="constant")[crop]

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))


def ssim(a, b, data_range: float, **kwargs) -> float:
    return float(np.mean(ssim_map(a, b, data_range, **kwargs)))


# -- HU statistics -----------------------------------------------------------------

@dataclass
class PatchStats:
    positions: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.means.mean())

    @property
    def std(self) -> float:
        return float(self.stds.mean())


class InsufficientPatchesError(ValueError):
    def __init__(self, found: int, needed: int):
        super().__init__(f"only {found} valid patch positions inside the mask, {needed} requested")
        self.found = found


def valid_patch_positions(mask: np.ndarray, patch_size: int) -> np.ndarray:
    """Top-left corners (N, 2) of patches lying entirely inside ``mask``."""
    m = np.asarray(mask, dtype=np.int64)
    if m.shape[0] < patch_size or m.shape[1] < patch_size:
        return np.zeros((0, 2), dtype=np.int64)
    ii = np.pad(m.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    p = patch_size
    counts = ii[p:, p:] - ii[:-p, p:] - ii[p:, :-p] + ii[:-p, :-p]
    return np.argwhere(counts == p * p)


def patch_stats(img, patch_size: int = 60, num_patches: int = 300, mask=None, seed: int = 0) -> PatchStats:
    """Per-patch mean/std (population) over randomly placed patches inside ``mask``.

    The aggregate (``.mean`` / ``.std``) is the average of per-patch values.
    Positions are drawn without replacement.
    """
    px = _px(img)
    mask = np.ones(px.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    _same_shape(px, mask)
    positions = valid_patch_positions(mask, patch_size)
    if len(positions) < num_patches:
        raise InsufficientPatchesError(len(positions), num_patches)
    rng = np.random.default_rng(seed)
    chosen = positions[np.sort(rng.choice(len(positions), num_patches, replace=False))]
    patches = np.stack([px[r:r + patch_size, c:c + patch_size] for r, c in chosen])
    return PatchStats(chosen, patches.mean((1, 2)), patches.std((1, 2)))


def roi_stats(img, center, radius: float) -> tuple[float, float]:
    """Mean and population std over pixels within ``radius`` of ``center`` (row, col)."""
    px = _px(img)
    cy, cx = center
    h, w = px.shape
    if cy - radius < 0 or cx - radius < 0 or cy + radius > h - 1 or cx + radius > w - 1:
        raise ValueError(f"ROI center={center} radius={radius} extends outside the {h}x{w} image")
    yy, xx = np.ogrid[:h, :w]
    sel = px[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2]
    return float(sel.mean()), float(sel.std())


def region_stats(img, mask) -> tuple[float, float, int]:
    px = _px(img)
    mask = np.asarray(mask, dtype=bool)
    _same_shape(px, mask)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("empty region mask")
    sel = px[mask]
    return float(sel.mean()), float(sel.std()), n


def homogeneous_regions(clean, margin: int = 3, min_pixels: int = 50) -> dict:
    """Masks of constant-valued regions of a noise-free image, eroded by ``margin``.

    Keys are ``"hu<value>"``, e.g. ``"hu-1000"`` for the air background.
    """
    px = _px(clean)
    size = 2 * margin + 1
    flat = ndimage.maximum_filter(px, size, mode="nearest") == ndimage.minimum_filter(px, size, mode="nearest")
    out = {}
    for value in np.unique(px[flat]):
        m = flat & (px == value)
        if m.sum() >= min_pixels:
            out[f"hu{value:g}"] = m
    return out


# -- visual exports -------------------------------------------------------------

def difference_image(a, b, window=(-50.0, 50.0)) -> np.ndarray:
    """``a - b`` clamped to ``window`` and mapped linearly to [0, 1]."""
    lo, hi = window
    if not lo < hi:
        raise ValueError(f"window low {lo} must be below high {hi}")
    a, b = _px(a), _px(b)
    _same_shape(a, b)
    return np.clip((a - b - lo) / (hi - lo), 0.0, 1.0)


def save_gray8(image01: np.ndarray, path) -> None:
    arr = np.rint(np.clip(image01, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


# -- reports ----------------------------------------------------------------------

@dataclass
class RegionStat:
    region_id: str
    mean_hu: float
    std_hu: float
    pixel_count: int
    lf_mean_delta_hu: float | None = None


@dataclass
class EvalReport:
    image_id: str
    psnr_db: float | None = None
    ssim: float | None = None
    data_range: float | None = None
    window: tuple = DEFAULT_WINDOW
    ssim_params: dict = field(default_factory=lambda: {"k1": SSIM_K1, "k2": SSIM_K2, "win": SSIM_WIN,
                                                       "sigma": SSIM_SIGMA})
    region_stats: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["psnr_db"] is not None and math.isinf(d["psnr_db"]):
            d["psnr_db"] = "inf"
        d["window"] = list(self.window)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        if d.get("psnr_db") == "inf":
            d["psnr_db"] = math.inf
        d["window"] = tuple(d["window"])
        d["region_stats"] = [RegionStat(**r) for r in d.get("region_stats", [])]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def evaluate_image(pred: CtImage, ref: CtImage | None = None, regions: dict | None = None,
                   window=DEFAULT_WINDOW, input_image: CtImage | None = None, level: int | None = None,
                   filter_name: str = "db3") -> EvalReport:
    """PSNR/SSIM against ``ref`` (both clipped to ``window``) and per-region HU stats.

    With ``input_image`` and ``level``, each region also records the mean
    difference between ``pred`` and the input's low-frequency image.
    """
    lo, hi = window
    report = EvalReport(pred.id, window=(float(lo), float(hi)))
    if ref is not None:
        a, b = np.clip(pred.pixels, lo, hi), np.clip(ref.pixels, lo, hi)
        report.data_range = float(hi - lo)
        report.psnr_db = psnr(a, b, report.data_range)
        report.ssim = ssim(a, b, report.data_range)
    lf = None
    if input_image is not None and level is not None:
        lf = low_freq(input_image.pixels, level, filter_name)
    for name, mask in (regions or {}).items():
        mean, std, n = region_stats(pred, mask)
        delta = None if lf is None else float(pred.pixels[mask].mean() - lf[mask].mean())
        report.region_stats.append(RegionStat(name, mean, std, n, delta))
    return report


def aggregate_reports(reports) -> dict:
    """Averages over images: PSNR (inf only if every image is inf), SSIM, per-region mean/std."""
    reports = list(reports)
    out = {"image_count": len(reports)}
    psnrs = [r.psnr_db for r in reports if r.psnr_db is not None]
    if psnrs:
        finite = [p for p in psnrs if math.isfinite(p)]
        out["psnr_db"] = float(np.mean(finite)) if finite else "inf"
        out["psnr_inf_count"] = len(psnrs) - len(finite)
    ssims = [r.ssim for r in reports if r.ssim is not None]
    if ssims:
        out["ssim"] = float(np.mean(ssims))
    regions: dict = {}
    for r in reports:
        for s in r.region_stats:
            regions.setdefault(s.region_id, []).append(s)
    out["regions"] = {
        name: {
            "mean_hu": float(np.mean([s.mean_hu for s in stats])),
            "std_hu": float(np.mean([s.std_hu for s in stats])),
            "image_count": len(stats),
            "max_abs_lf_mean_delta_hu": (max(abs(s.lf_mean_delta_hu) for s in stats)
                                         if all(s.lf_mean_delta_hu is not None for s in stats) else None),
        }
        for name, stats in sorted(regions.items())
    }
    if reports:
        out["window"] = list(reports[0].window)
    return out


def write_reports(reports, out_dir) -> Path:
    """One JSON document per image plus ``aggregate.json``; returns the aggregate path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for r in reports:
        (out_dir / f"{r.image_id}.json").write_text(r.to_json() + "\n")
    path = out_dir / "aggregate.json"
    path.write_text(json.dumps(aggregate_reports(reports), indent=2, sort_keys=True) + "\n")
    return path
