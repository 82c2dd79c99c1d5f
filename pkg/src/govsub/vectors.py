"""Embedding helpers: normalization, validation and cosine similarity."""

from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError

__all__ = [
    "UNIT_NORM_TOLERANCE",
    "SIMILARITY_DECIMALS",
    "as_embedding",
    "normalize",
    "cosine_similarity",
    "quantize_similarity",
    "meets_threshold",
]

UNIT_NORM_TOLERANCE = 1e-6
SIMILARITY_DECIMALS = 9


def normalize(v) -> np.ndarray:
    """Scale ``v`` to unit L2 norm.

    Returns a new read-only float64 array. Raises ValidationError for the
    zero vector or any non-finite component.
    """
    arr = np.array(v, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValidationError("embedding must have at least one component")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("embedding contains NaN or Inf")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValidationError("cannot normalize the zero vector")
    out = arr / norm
    out.flags.writeable = False
    return out


def as_embedding(v, dim: int | None = None) -> np.ndarray:
    """Validate an already-normalized embedding and freeze it.

    The vector must be finite and have unit norm within
    ``UNIT_NORM_TOLERANCE``; ``dim`` (if given) pins its length.
    """
    arr = np.array(v, dtype=np.float64).reshape(-1)
    if dim is not None and arr.shape[0] != dim:
        raise ValidationError(f"embedding has dimension {arr.shape[0]}, expected {dim}")
    if arr.size == 0:
        raise ValidationError("embedding must have at least one component")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("embedding contains NaN or Inf")
    norm = float(np.linalg.norm(arr))
    if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
        raise ValidationError(f"embedding is not unit norm (|v| = {norm!r})")
    arr.flags.writeable = False
    return arr


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine similarity undefined for the zero vector")
    sim = float(np.dot(a, b))
    # unit inputs skip the division so that dot products agree bit-for-bit
    if abs(na - 1.0) > UNIT_NORM_TOLERANCE or abs(nb - 1.0) > UNIT_NORM_TOLERANCE:
        sim = sim / (na * nb)
    if math.isnan(sim):
        raise ValidationError("similarity is NaN")
    return min(1.0, max(-1.0, sim))


def quantize_similarity(sim: float) -> float:
    """Round a similarity to ``SIMILARITY_DECIMALS`` places before any threshold test.

    Uses numpy rounding so scalar and batched comparisons agree exactly.
    """
    return float(np.round(float(sim), SIMILARITY_DECIMALS))


def meets_threshold(sim: float, threshold: float) -> bool:
    """Inclusive test; both sides are quantized so a similarity equal to its threshold always passes."""
    return quantize_similarity(sim) >= quantize_similarity(threshold)
