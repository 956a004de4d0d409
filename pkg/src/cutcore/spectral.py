"""Patch affinity graph and the normalized-cut eigenproblem.

The bipartition criterion is the generalized system (D - W) x = lambda D x,
solved through the symmetric normalized Laplacian: with y = D^{1/2} x the
system becomes D^{-1/2} (D - W) D^{-1/2} y = lambda y, a standard symmetric
eigenproblem sharing eigenvalues with the generalized one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

AFFINITY_FLOOR = 1e-5
RESIDUAL_TOL = 1e-6

__all__ = [
    "DegenerateFeatureError",
    "SolverError",
    "AffinityMatrix",
    "EigenSolution",
    "validate_feature_map",
    "build_affinity",
    "threshold_affinity",
    "solve_ncut",
]


class DegenerateFeatureError(ValueError):
    """A patch feature vector has zero norm; cosine affinity is undefined."""


class SolverError(RuntimeError):
    """The eigensolver failed to produce a residual-valid pair."""


@dataclass
class AffinityMatrix:
    """Symmetric patch-similarity matrix with its degree vector."""

    w: np.ndarray  # (n, n)
    d: np.ndarray  # (n,) row sums

    @classmethod
    def from_weights(cls, w: np.ndarray) -> "AffinityMatrix":
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"affinity must be square, got {w.shape}")
        if not np.allclose(w, w.T, rtol=0.0, atol=1e-12):
            raise ValueError("affinity must be symmetric within 1e-12")
        return cls(w=w, d=w.sum(axis=1))

    @property
    def n(self) -> int:
        return self.w.shape[0]


@dataclass
class EigenSolution:
    """Second-smallest generalized eigenpair of (D - W) x = lambda D x."""

    lam: float
    x: np.ndarray  # unit 2-norm, max-|x| entry positive
    residual: float


def validate_feature_map(features: np.ndarray) -> np.ndarray:
    """Check a (grid_h, grid_w, dim) feature map and return it as float64."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 3:
        raise ValueError(f"feature map must be (grid_h, grid_w, dim), got {f.shape}")
    if f.shape[0] < 2 or f.shape[1] < 2:
        raise ValueError(f"grid must be at least 2x2, got {f.shape[:2]}")
    if not np.isfinite(f).all():
        raise ValueError("feature map contains NaN/Inf")
    return f


def build_affinity(features: np.ndarray) -> AffinityMatrix:
    """Cosine affinity between patch features, patches flattened row-major."""
    f = validate_feature_map(features)
    flat = f.reshape(-1, f.shape[2])
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise DegenerateFeatureError(f"zero-norm feature vector at patch {bad}")
    unit = flat / norms[:, None]
    w = unit @ unit.T
    w = np.clip((w + w.T) / 2.0, -1.0, 1.0)  # exact symmetry, cosine range
    return AffinityMatrix.from_weights(w)


def threshold_affinity(a: AffinityMatrix, tau_ncut: float) -> AffinityMatrix:
    """Binarize the affinity: entries >= tau_ncut become 1, the rest the
    1e-5 floor. Degrees are recomputed; every degree stays positive."""
    if not -1.0 <= tau_ncut <= 1.0:
        raise ValueError(f"tau_ncut must be in [-1, 1], got {tau_ncut}")
    w = np.where(a.w >= tau_ncut, 1.0, AFFINITY_FLOOR)
    return AffinityMatrix.from_weights(w)


def solve_ncut(a: AffinityMatrix) -> EigenSolution:
    """Second-smallest eigenpair of (D - W) x = lambda D x.

    Solves the symmetric normalized Laplacian with a dense symmetric
    (tridiagonalization) eigensolver and maps back via x = D^{-1/2} y.
    The sign is fixed so the maximum-|x| entry is positive.
    """
    if np.any(a.d <= 0.0):
        raise ValueError("all degrees must be positive; threshold the affinity first")
    d_isqrt = 1.0 / np.sqrt(a.d)
    lap = np.diag(a.d) - a.w
    lap_sym = d_isqrt[:, None] * lap * d_isqrt[None, :]
    lap_sym = (lap_sym + lap_sym.T) / 2.0
    try:
        vals, vecs = scipy.linalg.eigh(lap_sym, subset_by_index=(0, 1))
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"eigensolver did not converge: {exc}") from exc
    lam = float(vals[1])
    x = d_isqrt * vecs[:, 1]
    x = x / np.linalg.norm(x)
    if x[np.argmax(np.abs(x))] < 0.0:
        x = -x
    residual = float(np.linalg.norm(lap @ x - lam * (a.d * x)))
    if residual > RESIDUAL_TOL:
        raise SolverError(f"residual {residual:.3e} exceeds {RESIDUAL_TOL:.0e}")
    return EigenSolution(lam=lam, x=x, residual=residual)
