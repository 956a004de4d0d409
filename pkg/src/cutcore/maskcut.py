"""Iterative multi-object discovery: binarize the cut eigenvector, orient
the foreground, suppress found patches in the affinity, repeat."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import (
    AFFINITY_FLOOR,
    AffinityMatrix,
    EigenSolution,
    build_affinity,
    solve_ncut,
    threshold_affinity,
    validate_feature_map,
)

DEFAULT_TAU_NCUT = 0.15
DEFAULT_N_MASKS = 3

__all__ = [
    "ExhaustedError",
    "MaskCutResult",
    "binarize_eigenvector",
    "select_foreground",
    "mask_affinity",
    "maskcut",
]


class ExhaustedError(RuntimeError):
    """Every patch already belongs to a prior foreground mask."""


@dataclass
class MaskCutResult:
    """Stage-ordered discovered masks with their eigenpairs."""

    masks: list[np.ndarray] = field(default_factory=list)
    eigen: list[EigenSolution] = field(default_factory=list)


def binarize_eigenvector(x: np.ndarray, grid: tuple[int, int]) -> np.ndarray:
    """Mask bit (i,j) set iff the eigenvector entry is >= its mean."""
    grid_h, grid_w = grid
    x = np.asarray(x, dtype=np.float64)
    if x.size != grid_h * grid_w:
        raise ValueError(f"eigenvector length {x.size} != {grid_h}x{grid_w}")
    return (x >= x.mean()).reshape(grid_h, grid_w)


def _corner_count(bits: np.ndarray) -> int:
    return int(bits[0, 0]) + int(bits[0, -1]) + int(bits[-1, 0]) + int(bits[-1, -1])


def select_foreground(mask: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pick mask or its complement as the foreground.

    Two criteria: the foreground should hold the patch with the maximum
    absolute eigenvector value, and should contain at most one of the four
    grid corners. When only one orientation passes the corner test it wins
    outright; otherwise the orientation holding the max-|x| patch does.
    """
    comp = ~mask
    c_m = _corner_count(mask)
    c_c = _corner_count(comp)
    if c_m <= 1 and c_c >= 2:
        return mask
    if c_m >= 2 and c_c <= 1:
        return comp
    # both corner-valid or both corner-invalid: follow the max-|x| patch
    peak = int(np.argmax(np.abs(np.asarray(x).ravel())))
    return mask if mask.ravel()[peak] else comp


def mask_affinity(features: np.ndarray, prior_masks: list[np.ndarray],
                  tau_ncut: float = DEFAULT_TAU_NCUT) -> AffinityMatrix:
    """Affinity with prior-foreground patches suppressed.

    Features of patches inside any prior mask are zeroed before the cosine
    (original norms stay in the denominator), which drives their rows and
    columns to the 1e-5 floor; the binarizing threshold is then applied.
    """
    f = validate_feature_map(features)
    grid = f.shape[:2]
    suppressed = np.zeros(grid, dtype=bool)
    for m in prior_masks:
        if m.shape != grid:
            raise ValueError(f"prior mask shape {m.shape} != grid {grid}")
        suppressed |= m.astype(bool)
    if suppressed.all():
        raise ExhaustedError("every patch is covered by prior masks")
    a = build_affinity(f)
    w = a.w.copy()
    hidden = suppressed.ravel()
    w[hidden, :] = AFFINITY_FLOOR
    w[:, hidden] = AFFINITY_FLOOR
    return threshold_affinity(AffinityMatrix.from_weights(w), tau_ncut)


def maskcut(features: np.ndarray, n_masks: int = DEFAULT_N_MASKS,
            tau_ncut: float = DEFAULT_TAU_NCUT) -> MaskCutResult:
    """Discover up to n_masks pairwise-disjoint patch masks.

    Each stage solves the cut on the suppressed affinity, binarizes the
    eigenvector against its mean, orients the foreground, and clears any
    bits already claimed by earlier stages. A degenerate stage (empty or
    full mask, or no patches left) ends the loop early.
    """
    if n_masks < 1:
        raise ValueError(f"n_masks must be >= 1, got {n_masks}")
    f = validate_feature_map(features)
    grid = f.shape[:2]
    result = MaskCutResult()
    for _ in range(n_masks):
        try:
            affinity = mask_affinity(f, result.masks, tau_ncut)
        except ExhaustedError:
            break
        solution = solve_ncut(affinity)
        mask = binarize_eigenvector(solution.x, grid)
        if mask.all() or not mask.any():
            break
        mask = select_foreground(mask, solution.x)
        for prior in result.masks:
            mask = mask & ~prior
        if mask.all() or not mask.any():
            break
        result.masks.append(mask)
        result.eigen.append(solution)
    return result
