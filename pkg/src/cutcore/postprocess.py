"""Pixel-level refinement: lift patch masks to pixel masks, run dense-CRF
mean-field inference against the image, and extract tight boxes.

The CRF is the standard two-kernel fully-connected model: an appearance
kernel (Gaussian in position and color) and a smoothness kernel (Gaussian
in position) under a Potts label compatibility. Pairwise messages are
computed by direct summation up to 64x64 images; larger images use a
separable Gaussian blur on a downsampled regular lattice over the 5-D
(position, color) feature space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import EigenSolution

EXACT_MAX_SIDE = 64

__all__ = [
    "EmptyMaskError",
    "BoundingBox",
    "CrfParams",
    "CrfDiagnostics",
    "bilinear_resize",
    "upsample_mask",
    "mean_field",
    "crf_refine",
    "mask_to_bbox",
    "score_mask",
]


class EmptyMaskError(ValueError):
    """Operation requires at least one foreground pixel."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box, top-left corner plus extent, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass
class CrfParams:
    n_iters: int = 10
    w_appearance: float = 4.0
    w_smoothness: float = 3.0
    theta_alpha: float = 67.0  # appearance position bandwidth, px
    theta_beta: float = 3.0  # appearance color bandwidth, levels
    theta_gamma: float = 1.0  # smoothness position bandwidth, px
    unary_fg_prob: float = 0.7

    def validate(self) -> None:
        if self.n_iters < 0:
            raise ValueError("n_iters must be >= 0")
        for name in ("w_appearance", "w_smoothness", "theta_alpha",
                     "theta_beta", "theta_gamma"):
            if getattr(self, name) < 0 or (name.startswith("theta")
                                           and getattr(self, name) == 0):
                raise ValueError(f"{name} must be positive")
        if not 0.5 < self.unary_fg_prob < 1.0:
            raise ValueError("unary_fg_prob must lie in (0.5, 1)")


@dataclass
class CrfDiagnostics:
    """Per-iteration convergence certificate."""

    norm_errors: list[float] = field(default_factory=list)  # max |sum_l Q - 1|
    max_deltas: list[float] = field(default_factory=list)  # max |Q - Q_prev|


def bilinear_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling at output pixel centers with edge clamping."""
    src = np.asarray(arr, dtype=np.float64)
    in_h, in_w = src.shape
    y = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    x = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    fy = y - y0
    fx = x - x0
    y0c = np.clip(y0, 0, in_h - 1)
    y1c = np.clip(y0 + 1, 0, in_h - 1)
    x0c = np.clip(x0, 0, in_w - 1)
    x1c = np.clip(x0 + 1, 0, in_w - 1)
    top = src[y0c][:, x0c] * (1.0 - fx) + src[y0c][:, x1c] * fx
    bottom = src[y1c][:, x0c] * (1.0 - fx) + src[y1c][:, x1c] * fx
    return top * (1.0 - fy)[:, None] + bottom * fy[:, None]


def upsample_mask(mask: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear interpolation of the {0,1} grid, then a 0.5 threshold
    (exact 0.5 counts as foreground)."""
    m = np.asarray(mask).astype(np.float64)
    return bilinear_resize(m, height, width) >= 0.5


def _unary_energy(mask: np.ndarray, fg_prob: float) -> np.ndarray:
    """(2, n) energies: row 0 background, row 1 foreground."""
    m = mask.ravel().astype(bool)
    u = np.empty((2, m.size))
    u[1] = np.where(m, -np.log(fg_prob), -np.log(1.0 - fg_prob))
    u[0] = np.where(m, -np.log(1.0 - fg_prob), -np.log(fg_prob))
    return u


def _color_planes(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    return img.reshape(-1, img.shape[2])


def _dense_kernel(image: np.ndarray, p: CrfParams) -> np.ndarray:
    """Combined weighted pairwise kernel as an explicit n x n matrix."""
    h, w = image.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    yy = yy.ravel().astype(np.float64)
    xx = xx.ravel().astype(np.float64)
    d2_pos = (yy[:, None] - yy[None, :]) ** 2 + (xx[:, None] - xx[None, :]) ** 2
    color = _color_planes(image)
    d2_col = np.zeros_like(d2_pos)
    for c in range(color.shape[1]):
        d2_col += (color[:, c][:, None] - color[:, c][None, :]) ** 2
    k_app = np.exp(-d2_pos / (2.0 * p.theta_alpha ** 2)
                   - d2_col / (2.0 * p.theta_beta ** 2))
    k_smooth = np.exp(-d2_pos / (2.0 * p.theta_gamma ** 2))
    return p.w_appearance * k_app + p.w_smoothness * k_smooth


class _LatticeFilter:
    """Approximate Gaussian filtering over scattered feature points.

    Points are splatted multilinearly onto a regular unit-spaced lattice in
    the scaled feature space, blurred separably per axis with a discrete
    unit Gaussian, and sliced back with the splat weights. Only occupied
    cells are stored; blur neighbor lookups are resolved once up front.
    """

    _TAPS = ((1, np.exp(-0.5)), (2, np.exp(-2.0)))

    def __init__(self, feats: np.ndarray):
        n, d = feats.shape
        low = np.floor(feats).astype(np.int64)
        frac = feats - low
        origin = low.min(axis=0) - 2  # margin so blur neighbors never wrap
        extent = low.max(axis=0) + 1 - origin + 3
        strides = np.ones(d, dtype=np.int64)
        for k in range(d - 2, -1, -1):
            strides[k] = strides[k + 1] * extent[k + 1]
        base = ((low - origin) * strides).sum(axis=1)
        keys = np.empty((n, 1 << d), dtype=np.int64)
        weights = np.empty((n, 1 << d))
        for b in range(1 << d):
            offset = 0
            wgt = np.ones(n)
            for k in range(d):
                if (b >> k) & 1:
                    offset += strides[k]
                    wgt = wgt * frac[:, k]
                else:
                    wgt = wgt * (1.0 - frac[:, k])
            keys[:, b] = base + offset
            weights[:, b] = wgt
        self.cell_keys, inverse = np.unique(keys.ravel(), return_inverse=True)
        self.inverse = inverse.astype(np.int64)
        self.weights = weights
        self.n_cells = self.cell_keys.size
        self.n_points = n
        # per axis: [(tap weight, neighbor cell index or -1)]
        self.axis_taps = []
        for stride in strides:
            taps = []
            for delta, g in self._TAPS:
                for sign in (1, -1):
                    target = self.cell_keys + sign * delta * stride
                    idx = np.searchsorted(self.cell_keys, target)
                    idx = np.clip(idx, 0, self.n_cells - 1)
                    idx = np.where(self.cell_keys[idx] == target, idx, -1)
                    taps.append((g, idx))
            self.axis_taps.append(taps)

    def __call__(self, values: np.ndarray) -> np.ndarray:
        """values (n,) -> filtered (n,), approximating sum_j k(i,j) v_j."""
        spread = (self.weights * values[:, None]).ravel()
        cells = np.bincount(self.inverse, weights=spread, minlength=self.n_cells)
        padded = np.empty(self.n_cells + 1)
        for taps in self.axis_taps:
            padded[:-1] = cells
            padded[-1] = 0.0  # sentinel slot for absent neighbors
            blurred = cells.copy()
            for g, idx in taps:
                blurred += g * padded[idx]
            cells = blurred
        gathered = cells[self.inverse].reshape(self.n_points, -1)
        return (gathered * self.weights).sum(axis=1)


def _lattice_messages(image: np.ndarray, p: CrfParams):
    h, w = image.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    pos = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
    color = _color_planes(image)
    app_feats = np.concatenate([pos / p.theta_alpha, color / p.theta_beta], axis=1)
    smooth_feats = pos / p.theta_gamma
    app = _LatticeFilter(app_feats)
    smooth = _LatticeFilter(smooth_feats)

    def message(q_other: np.ndarray) -> np.ndarray:
        return (p.w_appearance * app(q_other)
                + p.w_smoothness * smooth(q_other))

    return message


def mean_field(image: np.ndarray, mask: np.ndarray,
               params: CrfParams | None = None
               ) -> tuple[np.ndarray, CrfDiagnostics]:
    """Run mean-field inference and return (refined mask, diagnostics).

    The unary comes from the input mask with confidence unary_fg_prob;
    pairwise self-contributions are excluded. Labels are the per-pixel
    argmax after n_iters updates (n_iters=0 returns the unary argmax,
    i.e. the input mask).
    """
    p = params or CrfParams()
    p.validate()
    img = np.asarray(image)
    m = np.asarray(mask).astype(bool)
    if img.shape[:2] != m.shape:
        raise ValueError(f"image {img.shape[:2]} and mask {m.shape} disagree")
    h, w = m.shape
    unary = _unary_energy(m, p.unary_fg_prob)
    q = np.exp(-unary)
    q /= q.sum(axis=0, keepdims=True)
    total_w = p.w_appearance + p.w_smoothness
    diag = CrfDiagnostics()

    if max(h, w) <= EXACT_MAX_SIDE:
        kernel = _dense_kernel(img, p)
        filt = lambda v: kernel @ v
    else:
        filt = _lattice_messages(img, p)

    for _ in range(p.n_iters):
        # Potts compatibility: each label is pushed by the other's mass
        msg = np.empty_like(q)
        msg[0] = filt(q[1]) - total_w * q[1]
        msg[1] = filt(q[0]) - total_w * q[0]
        energy = unary + msg
        energy -= energy.min(axis=0, keepdims=True)
        q_new = np.exp(-energy)
        q_new /= q_new.sum(axis=0, keepdims=True)
        diag.norm_errors.append(float(np.abs(q_new.sum(axis=0) - 1.0).max()))
        diag.max_deltas.append(float(np.abs(q_new - q).max()))
        q = q_new

    return (q[1] > q[0]).reshape(h, w), diag


def crf_refine(image: np.ndarray, mask: np.ndarray,
               params: CrfParams | None = None) -> np.ndarray:
    """Mean-field refinement of a pixel mask against its image."""
    refined, _ = mean_field(image, mask, params)
    return refined


def mask_to_bbox(mask: np.ndarray) -> BoundingBox:
    """Tight box: every foreground pixel inside, every edge touched."""
    ys, xs = np.nonzero(np.asarray(mask))
    if ys.size == 0:
        raise EmptyMaskError("mask has no foreground pixels")
    x0 = int(xs.min())
    y0 = int(ys.min())
    return BoundingBox(x0, y0, int(xs.max()) - x0 + 1, int(ys.max()) - y0 + 1)


def score_mask(eigen: EigenSolution, mask: np.ndarray) -> float:
    """Confidence for a patch mask: mean foreground |x| relative to the
    peak |x|, clamped to [0, 1]."""
    m = np.asarray(mask).ravel().astype(bool)
    if not m.any():
        raise EmptyMaskError("cannot score an empty mask")
    mag = np.abs(eigen.x)
    return float(np.clip(mag[m].mean() / mag.max(), 0.0, 1.0))
