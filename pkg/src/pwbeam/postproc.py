"""Envelope detection and B-mode conversion of beamformed images.

The analytic signal is computed per axial column in the frequency domain
(negative frequencies zeroed, positive doubled, DC and Nyquist kept), with
the transform padded to the next power of two and truncated back. The
envelope is its magnitude; display mapping is plain log compression with a
clipped dynamic range; no speckle reduction or gamma correction.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

DEFAULT_DYNAMIC_RANGE_DB = 60.0


@dataclass(frozen=True)
class BmodeImage:
    """Log-compressed envelope image: values in dB, max at 0 dB."""

    data: np.ndarray
    dynamic_range: float = DEFAULT_DYNAMIC_RANGE_DB

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if self.dynamic_range <= 0:
            raise ValueError("dynamic_range must be positive")
        if data.size and not np.isclose(data.max(), 0.0, atol=1e-9):
            raise ValueError("B-mode data must peak at 0 dB")
        if data.size and data.min() < -self.dynamic_range - 1e-9:
            raise ValueError("B-mode data extends below the dynamic range")
        object.__setattr__(self, "data", data)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def hilbert_analytic(signal) -> np.ndarray:
    """Analytic signal along axis 0.

    Accepts a 1-D signal or a 2-D image (columns treated independently).
    The input must have at least two samples along axis 0.
    """
    x = np.asarray(signal, dtype=float)
    m = x.shape[0]
    if m < 2:
        raise ValueError("hilbert_analytic needs at least 2 samples")
    nfft = _next_pow2(m)
    X = np.fft.fft(x, n=nfft, axis=0)
    h = np.zeros(nfft)
    h[0] = 1.0
    h[1 : nfft // 2] = 2.0
    h[nfft // 2] = 1.0
    if x.ndim > 1:
        h = h.reshape((nfft,) + (1,) * (x.ndim - 1))
    analytic = np.fft.ifft(X * h, axis=0)
    return analytic[:m]


def envelope(image) -> np.ndarray:
    """Magnitude of the analytic signal per axial column."""
    return np.abs(hilbert_analytic(np.asarray(image)))


def log_compress(env, dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB) -> BmodeImage:
    """Map an envelope to dB relative to its peak, clipped below.

    Raises
    ------
    NumericalError
        If the envelope has no positive values to normalize by.
    """
    env = np.asarray(env, dtype=float)
    peak = env.max() if env.size else 0.0
    if not peak > 0:
        raise NumericalError("cannot log-compress an all-zero envelope")
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(env / peak)
    db = np.maximum(db, -dynamic_range_db)
    return BmodeImage(data=db, dynamic_range=dynamic_range_db)


def bmode(rf_image, dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB) -> BmodeImage:
    """Convenience: envelope detection followed by log compression."""
    return log_compress(envelope(rf_image), dynamic_range_db)
