"""Shared test oracles and fixture builders.

The eigen oracle intentionally takes a different dense route than the
production solver: it hands the generalized problem (D - W, D) straight to
LAPACK's Cholesky-reduction driver instead of forming the normalized
Laplacian. Hand-computed spectra pin the oracle itself.
"""

import numpy as np
import scipy.linalg


def eigen_oracle(w: np.ndarray):
    """Full generalized spectrum of (D - W) x = lambda D x, D-orthonormal
    eigenvectors in the columns."""
    w = np.asarray(w, dtype=np.float64)
    d = w.sum(axis=1)
    lap = np.diag(d) - w
    vals, vecs = scipy.linalg.eigh(lap, np.diag(d))
    return vals, vecs


def oracle_second_pair(w: np.ndarray):
    """(lambda_2, unit-norm eigenvector with positive max-|x| entry)."""
    vals, vecs = eigen_oracle(w)
    x = vecs[:, 1]
    x = x / np.linalg.norm(x)
    if x[np.argmax(np.abs(x))] < 0:
        x = -x
    return float(vals[1]), x


def planted_feature_map(blocks, noise: float = 0.0, grid_h: int = 12,
                        grid_w: int = 12, seed: int = 0,
                        magnitude: float = 4.0) -> np.ndarray:
    """Feature map with orthogonal planted blocks over orthogonal
    per-patch background vectors.

    blocks: list of (row, col, h, w) rectangles. Every background patch
    gets its own basis direction so the background forms no large clique
    and single-block cuts are the cheapest normalized cuts.
    """
    rng = np.random.default_rng(seed)
    n_bg = grid_h * grid_w
    dim = len(blocks) + n_bg
    f = np.zeros((grid_h, grid_w, dim))
    patch_index = np.arange(n_bg).reshape(grid_h, grid_w)
    for r in range(grid_h):
        for c in range(grid_w):
            f[r, c, len(blocks) + patch_index[r, c]] = magnitude
    for k, (r0, c0, h, w) in enumerate(blocks):
        f[r0:r0 + h, c0:c0 + w, :] = 0.0
        f[r0:r0 + h, c0:c0 + w, k] = magnitude
    if noise:
        f = f + rng.normal(0.0, noise, f.shape)
    return f


def block_mask(block, grid_h: int = 12, grid_w: int = 12) -> np.ndarray:
    r0, c0, h, w = block
    m = np.zeros((grid_h, grid_w), dtype=bool)
    m[r0:r0 + h, c0:c0 + w] = True
    return m


def mask_iou_np(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 0.0


def random_thresholded_affinity(rng: np.random.Generator, min_gap: float = 1e-6):
    """Random thresholded affinity (n <= 64) whose lambda_2 is simple with
    spectral gap >= min_gap on both sides; resamples until satisfied."""
    while True:
        n = int(rng.integers(4, 65))
        dim = int(rng.integers(2, 9))
        feats = rng.normal(size=(n, dim))
        norms = np.linalg.norm(feats, axis=1)
        feats = feats / np.maximum(norms, 1e-12)[:, None]
        w = np.clip(feats @ feats.T, -1.0, 1.0)
        w = (w + w.T) / 2.0
        tau = float(rng.uniform(0.0, 0.3))
        w = np.where(w >= tau, 1.0, 1e-5)
        vals, _ = eigen_oracle(w)
        if vals[1] - vals[0] >= min_gap and vals[2] - vals[1] >= min_gap:
            return w


def reference_mean_field(image: np.ndarray, mask: np.ndarray, params):
    """Direct O(n^2) dense mean-field reference.

    Builds the combined pairwise kernel row by row and repeats the update
    equations independently of the production code. By contract the
    arithmetic order (elementwise kernel formula, matrix-product message
    summation) mirrors the production exact path so labels compare
    exactly.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, n_ch = img.shape
    n = h * w
    m = np.asarray(mask).astype(bool).ravel()
    fg, bg = params.unary_fg_prob, 1.0 - params.unary_fg_prob
    unary = np.empty((2, n))
    unary[1] = np.where(m, -np.log(fg), -np.log(bg))
    unary[0] = np.where(m, -np.log(bg), -np.log(fg))

    ys = np.repeat(np.arange(h), w).astype(np.float64)
    xs = np.tile(np.arange(w), h).astype(np.float64)
    colors = img.reshape(n, n_ch)
    kernel = np.empty((n, n))
    for i in range(n):
        d2_pos = (ys - ys[i]) ** 2 + (xs - xs[i]) ** 2
        d2_col = np.zeros(n)
        for c in range(n_ch):
            d2_col += (colors[:, c] - colors[i, c]) ** 2
        k_app = np.exp(-d2_pos / (2.0 * params.theta_alpha ** 2)
                       - d2_col / (2.0 * params.theta_beta ** 2))
        k_smooth = np.exp(-d2_pos / (2.0 * params.theta_gamma ** 2))
        kernel[i] = params.w_appearance * k_app + params.w_smoothness * k_smooth

    q = np.exp(-unary)
    q /= q.sum(axis=0, keepdims=True)
    total_w = params.w_appearance + params.w_smoothness
    for _ in range(params.n_iters):
        msg = np.empty_like(q)
        msg[0] = kernel @ q[1] - total_w * q[1]
        msg[1] = kernel @ q[0] - total_w * q[0]
        energy = unary + msg
        energy -= energy.min(axis=0, keepdims=True)
        q = np.exp(-energy)
        q /= q.sum(axis=0, keepdims=True)
    return (q[1] > q[0]).reshape(h, w)
