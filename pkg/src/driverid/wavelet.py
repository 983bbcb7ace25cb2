"""One-level orthonormal Haar decomposition of telemetry windows.

Each channel is transformed independently; the per-channel approximation
and detail halves are concatenated in channel order into two flat vectors
that feed the wavelet side branch of the encoder.  The 1/sqrt(2) scaling
makes the transform orthonormal, so energy is conserved exactly and the
inverse reconstructs the input to round-off.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatchError

_SQRT2 = np.sqrt(2.0)


def haar_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise sums/differences over the last axis, scaled by 1/sqrt(2).

    approx[k] = (x[2k] + x[2k+1]) / sqrt(2)
    detail[k] = (x[2k] - x[2k+1]) / sqrt(2)
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % 2 != 0:
        raise ShapeMismatchError(
            f"haar_forward needs an even number of frames, got {x.shape[-1]}")
    even = x[..., 0::2]
    odd = x[..., 1::2]
    return (even + odd) / _SQRT2, (even - odd) / _SQRT2


def haar_inverse(approx: np.ndarray, detail: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`haar_forward`."""
    approx = np.asarray(approx, dtype=np.float64)
    detail = np.asarray(detail, dtype=np.float64)
    if approx.shape != detail.shape:
        raise ShapeMismatchError(
            f"haar_inverse: approx {approx.shape} vs detail {detail.shape}")
    out = np.empty(approx.shape[:-1] + (2 * approx.shape[-1],), dtype=np.float64)
    out[..., 0::2] = (approx + detail) / _SQRT2
    out[..., 1::2] = (approx - detail) / _SQRT2
    return out


def window_wavelet_features(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flatten a [C, L] window into (approx, detail) vectors of length C*L/2.

    Channel 0's coefficients come first, then channel 1's, and so on.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeMismatchError(f"expected a [C, L] window, got shape {frames.shape}")
    approx, detail = haar_forward(frames)
    return approx.reshape(-1), detail.reshape(-1)


def batch_wavelet_features(batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`window_wavelet_features` over a [B, C, L] batch."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3:
        raise ShapeMismatchError(f"expected a [B, C, L] batch, got shape {batch.shape}")
    approx, detail = haar_forward(batch)
    b = batch.shape[0]
    return approx.reshape(b, -1), detail.reshape(b, -1)
