"""Adaptive image enhancement for scanned pages.

All operations are pure functions over immutable 8-bit grayscale rasters:
quality assessment, median denoising, Hough-transform deskew, Otsu
binarization, contrast stretching and DPI normalization. The adaptive
driver applies only the steps the measured page quality calls for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .model import InvoiceFlowError

__all__ = [
    "PageImage",
    "QualityReport",
    "PreprocessResult",
    "OtsuResult",
    "ImageTooSmall",
    "BlankPage",
    "DegenerateHistogram",
    "assess_quality",
    "denoise_median",
    "estimate_skew_hough",
    "rotate",
    "binarize_otsu",
    "contrast_stretch",
    "normalize_dpi",
    "preprocess_adaptive",
    "salt_estimate",
    "laplacian_sharpness",
]


class ImageTooSmall(InvoiceFlowError):
    pass


class BlankPage(InvoiceFlowError):
    pass


class DegenerateHistogram(InvoiceFlowError):
    pass


#: Pages with fewer dark pixels than this fraction (after Otsu) are blank.
MIN_DARK_FRACTION = 0.001

#: Hough search space: +/-15 degrees at 0.1-degree resolution, 1-px rho bins.
SKEW_LIMIT_DEG = 15.0
SKEW_STEP_DEG = 0.1

#: Cap on accumulated edge pixels; keeps the sweep fast on large pages.
MAX_HOUGH_POINTS = 40_000


@dataclass(frozen=True)
class PageImage:
    """One grayscale page: row-major uint8 pixels plus DPI and provenance."""

    pixels: np.ndarray
    dpi: int
    page: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        px = self.pixels
        if px.dtype != np.uint8 or px.ndim != 2:
            raise ValueError("pixels must be a 2-D uint8 array")
        if self.dpi <= 0:
            raise ValueError(f"dpi must be positive, got {self.dpi}")
        px.setflags(write=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def with_pixels(self, pixels: np.ndarray, dpi: Optional[int] = None) -> "PageImage":
        return PageImage(np.ascontiguousarray(pixels, dtype=np.uint8),
                         dpi if dpi is not None else self.dpi,
                         self.page, dict(self.meta))


class QualityReport(NamedTuple):
    sharpness: float
    contrast: float
    skew_deg: float
    score: float


class OtsuResult(NamedTuple):
    image: PageImage
    threshold: int
    degenerate: bool


@dataclass(frozen=True)
class PreprocessResult:
    image: PageImage
    applied: tuple[str, ...]
    blank: bool = False
    quality: Optional[QualityReport] = None


def laplacian_sharpness(img: PageImage) -> float:
    """Variance of the 3x3 Laplacian response over the page interior."""
    p = img.pixels.astype(np.float32)
    if p.shape[0] < 3 or p.shape[1] < 3:
        return 0.0
    lap = (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * p[1:-1, 1:-1])
    return float(lap.var())


def page_contrast(img: PageImage) -> float:
    p2, p98 = np.percentile(img.pixels, (2, 98))
    return float((p98 - p2) / 255.0)


def assess_quality(img: PageImage) -> QualityReport:
    """Measure sharpness, contrast and skew, combined into one [0,1] score.

    Score weights (0.5 sharpness / 0.3 contrast / 0.2 uprightness) are the
    package's own calibration; sharpness saturates at 500, skew at 15 deg.
    """
    if img.width < 32 or img.height < 32:
        raise ImageTooSmall(f"{img.width}x{img.height} below 32x32 minimum")
    sharpness = laplacian_sharpness(img)
    contrast = page_contrast(img)
    try:
        skew = estimate_skew_hough(img)
    except BlankPage:
        skew = 0.0
    score = (0.5 * min(sharpness / 500.0, 1.0)
             + 0.3 * contrast
             + 0.2 * (1.0 - min(abs(skew) / 15.0, 1.0)))
    return QualityReport(sharpness, contrast, skew, max(0.0, min(1.0, score)))


def denoise_median(img: PageImage, radius: int = 1) -> PageImage:
    """Median filter with a (2r+1)^2 edge-clamped window."""
    if radius not in (1, 2):
        raise ValueError(f"radius must be 1 or 2, got {radius}")
    k = 2 * radius + 1
    padded = np.pad(img.pixels, radius, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    stack = windows.reshape(img.height, img.width, k * k)
    med = np.sort(stack, axis=2)[:, :, (k * k) // 2]
    return img.with_pixels(med)


def _dark_mask(img: PageImage) -> tuple[np.ndarray, bool]:
    """Otsu-threshold dark mask plus a degenerate-histogram flag."""
    hist = np.bincount(img.pixels.ravel(), minlength=256)
    if np.count_nonzero(hist) <= 1:
        return np.zeros_like(img.pixels, dtype=bool), True
    t = _otsu_threshold(hist)
    return img.pixels <= t, False


def _edge_points(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Top-edge pixels of dark strokes: dark with a light pixel above."""
    above = np.zeros_like(mask)
    above[1:, :] = mask[:-1, :]
    edges = mask & ~above
    ys, xs = np.nonzero(edges)
    if ys.size > MAX_HOUGH_POINTS:
        stride = int(np.ceil(ys.size / MAX_HOUGH_POINTS))
        ys, xs = ys[::stride], xs[::stride]
    return ys, xs


def estimate_skew_hough(img: PageImage) -> float:
    """Text-line skew in degrees via a Hough sweep over stroke edges.

    Sweeps the full +/-15 degree range at 0.1-degree resolution; the score
    of an angle is the tallest 1-px rho bin of its accumulator column. Ties
    prefer the smallest magnitude, then the negative angle. Positive skew
    means text lines descend to the right.
    """
    mask, degenerate = _dark_mask(img)
    dark_fraction = float(mask.mean()) if mask.size else 0.0
    if degenerate or dark_fraction < MIN_DARK_FRACTION:
        raise BlankPage(f"dark fraction {dark_fraction:.5f} below {MIN_DARK_FRACTION}")

    ys, xs = _edge_points(mask)
    ys_f = ys.astype(np.float32)
    xs_f = xs.astype(np.float32)

    n_steps = int(round(SKEW_LIMIT_DEG / SKEW_STEP_DEG))
    angles = np.arange(-n_steps, n_steps + 1, dtype=np.int64) * SKEW_STEP_DEG
    diag = math.hypot(img.width, img.height)
    best_score = -1
    best_angle = 0.0
    for theta in angles:
        rad = math.radians(theta)
        rho = ys_f * math.cos(rad) - xs_f * math.sin(rad)
        bins = np.floor(rho + diag).astype(np.int64)
        score = int(np.bincount(bins).max())
        better = score > best_score
        if score == best_score:
            better = (abs(theta), theta) < (abs(best_angle), best_angle)
        if better:
            best_score = score
            best_angle = float(theta)
    return round(best_angle, 1)


def rotate(img: PageImage, degrees: float) -> PageImage:
    """Rotate about the center with bilinear resampling onto an expanded
    white canvas sized to the rotated bounding box."""
    if degrees == 0.0:
        return img.with_pixels(img.pixels.copy())
    rad = math.radians(degrees)
    c, s = math.cos(rad), math.sin(rad)
    w, h = img.width, img.height
    # Round before ceil so near-integer extents (e.g. exact 90-degree turns)
    # do not gain a spurious pixel from float error.
    out_w = int(math.ceil(round(abs(w * c) + abs(h * s), 6)))
    out_h = int(math.ceil(round(abs(h * c) + abs(w * s), 6)))

    yo, xo = np.meshgrid(np.arange(out_h, dtype=np.float32),
                         np.arange(out_w, dtype=np.float32), indexing="ij")
    dx = xo - (out_w - 1) / 2.0
    dy = yo - (out_h - 1) / 2.0
    # Inverse map: a horizontal source line lands on slope tan(degrees).
    xi = c * dx + s * dy + (w - 1) / 2.0
    yi = -s * dx + c * dy + (h - 1) / 2.0

    x0 = np.floor(xi).astype(np.int32)
    y0 = np.floor(yi).astype(np.int32)
    fx = xi - x0
    fy = yi - y0
    valid = (xi >= 0) & (xi <= w - 1) & (yi >= 0) & (yi <= h - 1)

    x0c = np.clip(x0, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)

    p = img.pixels.astype(np.float32)
    top = p[y0c, x0c] * (1 - fx) + p[y0c, x1c] * fx
    bot = p[y1c, x0c] * (1 - fx) + p[y1c, x1c] * fx
    out = top * (1 - fy) + bot * fy
    out = np.where(valid, out, 255.0)
    return img.with_pixels(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def _otsu_threshold(hist: np.ndarray) -> int:
    """Smallest threshold maximizing between-class variance w0*w1*(mu0-mu1)^2."""
    total = hist.sum()
    p = hist.astype(np.float64) / total
    omega = np.cumsum(p)
    mu = np.cumsum(p * np.arange(256))
    mu_total = mu[-1]
    denom = omega * (1.0 - omega)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = np.where(denom > 0, (mu_total * omega - mu) ** 2 / denom, -1.0)
    return int(np.argmax(sigma_b))


def binarize_otsu(img: PageImage) -> OtsuResult:
    """Otsu global threshold; dark pixels go to 0, the rest to 255.

    A constant image cannot be thresholded: it comes back unchanged with
    threshold 128 and the degenerate flag set instead of raising.
    """
    hist = np.bincount(img.pixels.ravel(), minlength=256)
    if np.count_nonzero(hist) <= 1:
        return OtsuResult(img.with_pixels(img.pixels.copy()), 128, True)
    t = _otsu_threshold(hist)
    out = np.where(img.pixels <= t, 0, 255).astype(np.uint8)
    return OtsuResult(img.with_pixels(out), t, False)


def contrast_stretch(img: PageImage, p_low: float = 2.0, p_high: float = 98.0) -> PageImage:
    """Linear map of [P(p_low), P(p_high)] onto [0, 255], clamped."""
    if not p_low < p_high:
        raise ValueError(f"p_low {p_low} must be below p_high {p_high}")
    lo, hi = np.percentile(img.pixels, (p_low, p_high))
    if hi <= lo:
        raise DegenerateHistogram(f"percentiles collapse at {lo}")
    values = np.arange(256, dtype=np.float64)
    lut = np.clip(np.rint((values - lo) * 255.0 / (hi - lo)), 0, 255).astype(np.uint8)
    return img.with_pixels(lut[img.pixels])


def normalize_dpi(img: PageImage, target: int = 300) -> PageImage:
    """Bilinear rescale by target/dpi; identity when already at target."""
    if img.dpi == target:
        return img
    scale = target / img.dpi
    new_w = max(1, int(round(img.width * scale)))
    new_h = max(1, int(round(img.height * scale)))
    xi = (np.arange(new_w, dtype=np.float32) + 0.5) * (img.width / new_w) - 0.5
    yi = (np.arange(new_h, dtype=np.float32) + 0.5) * (img.height / new_h) - 0.5
    xi = np.clip(xi, 0, img.width - 1)
    yi = np.clip(yi, 0, img.height - 1)
    x0 = np.floor(xi).astype(np.int32)
    y0 = np.floor(yi).astype(np.int32)
    fx = xi - x0
    fy = yi - y0
    x1 = np.minimum(x0 + 1, img.width - 1)
    y1 = np.minimum(y0 + 1, img.height - 1)

    p = img.pixels.astype(np.float32)
    top = p[np.ix_(y0, x0)] * (1 - fx) + p[np.ix_(y0, x1)] * fx
    bot = p[np.ix_(y1, x0)] * (1 - fx) + p[np.ix_(y1, x1)] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return img.with_pixels(np.clip(np.rint(out), 0, 255).astype(np.uint8), dpi=target)


def salt_estimate(img: PageImage) -> float:
    """Fraction of pixels that disagree strongly with their 3x3 median."""
    med = denoise_median(img, 1)
    diff = np.abs(img.pixels.astype(np.int16) - med.pixels.astype(np.int16))
    return float((diff > 100).mean())


def preprocess_adaptive(
    img: PageImage,
    *,
    target_dpi: int = 300,
    sharpness_gate: float = 200.0,
    salt_gate: float = 0.01,
    deskew_gate_deg: float = 0.3,
    contrast_gate: float = 0.5,
) -> PreprocessResult:
    """Run the fixed-order enhancement pipeline, skipping steps whose quality
    gate is closed: normalize -> denoise -> deskew -> stretch -> binarize.

    A blank page short-circuits after DPI normalization.
    """
    applied = ["normalize_dpi"]
    current = normalize_dpi(img, target_dpi)

    mask, degenerate = _dark_mask(current)
    if degenerate or float(mask.mean()) < MIN_DARK_FRACTION:
        return PreprocessResult(current, tuple(applied), blank=True)

    sharpness = laplacian_sharpness(current)
    salt = salt_estimate(current)
    if sharpness < sharpness_gate or salt > salt_gate:
        current = denoise_median(current, 1)
        applied.append("denoise_median")

    skew = estimate_skew_hough(current)
    if abs(skew) > deskew_gate_deg:
        current = rotate(current, -skew)
        applied.append("deskew")

    contrast = page_contrast(current)
    if contrast < contrast_gate:
        try:
            current = contrast_stretch(current)
            applied.append("contrast_stretch")
        except DegenerateHistogram:
            # Sparse pages can collapse both percentiles onto the
            # background value; nothing to stretch then.
            pass

    binarized, threshold, _ = binarize_otsu(current)
    applied.append("binarize_otsu")
    quality = QualityReport(
        sharpness, contrast, skew,
        max(0.0, min(1.0, 0.5 * min(sharpness / 500.0, 1.0)
                     + 0.3 * contrast
                     + 0.2 * (1.0 - min(abs(skew) / 15.0, 1.0)))))
    return PreprocessResult(binarized, tuple(applied), blank=False, quality=quality)
