"""Delay-and-sum and regularized minimum-variance beamformers.

Both operate on time-of-flight-corrected cubes (axial x lateral x channel)
and produce pre-envelope images. The minimum-variance path estimates a
per-pixel covariance by spatial smoothing over sliding channel
subapertures, applies diagonal loading, and solves for the distortionless
weights through a symmetric positive-definite factorization. Compounding
across transmit angles is a coherent (pre-envelope) pixel-wise mean.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class MvdrConfig:
    """Subaperture length, loading factor and per-pixel failure policy.

    ``loading_factor`` scales the identity added to each covariance by
    ``loading_factor * trace(R) / L``. ``on_singular`` is either
    ``"raise"`` (default) or ``"das"`` to substitute the uniform-weight
    output for pixels whose loaded covariance cannot be factorized.
    """

    subaperture_length: int
    loading_factor: float | None = None
    on_singular: str = "raise"

    def __post_init__(self):
        if self.subaperture_length < 1:
            raise ValueError("subaperture_length must be >= 1")
        if self.loading_factor is not None and self.loading_factor < 0:
            raise ValueError("loading_factor must be >= 0")
        if self.on_singular not in ("raise", "das"):
            raise ValueError("on_singular must be 'raise' or 'das'")

    def resolved_loading(self) -> float:
        """Default loading 1 / (100 * L) when none is given."""
        if self.loading_factor is None:
            return 1.0 / (100.0 * self.subaperture_length)
        return float(self.loading_factor)


def default_mvdr_config(num_channels: int) -> MvdrConfig:
    """L = floor(channels / 2), the standard robust subaperture choice."""
    return MvdrConfig(subaperture_length=max(num_channels // 2, 1))


def _cube_array(cube) -> np.ndarray:
    data = np.asarray(cube)
    if data.ndim != 3:
        raise ValueError("expected a 3-D cube (axial x lateral x channel)")
    return data


def apodized_sum(cube, weights) -> np.ndarray:
    """Per-pixel weighted channel sum: out[i,j] = sum_e w[i,j,e] * cube[i,j,e]."""
    data = _cube_array(cube)
    w = np.asarray(weights)
    if w.shape != data.shape:
        raise ValueError(f"weights shape {w.shape} does not match cube {data.shape}")
    return np.einsum("ijc,ijc->ij", w, data)


def das_beamform(cube) -> np.ndarray:
    """Uniform-weight channel mean, the delay-and-sum reference."""
    data = _cube_array(cube)
    n = data.shape[2]
    w = np.full_like(data, 1.0 / n)
    return apodized_sum(data, w)


def compound(images) -> np.ndarray:
    """Coherent compounding: pixel-wise mean of pre-envelope images."""
    images = list(images)
    if not images:
        raise ValueError("compound requires at least one image")
    stack = np.stack([np.asarray(im) for im in images])
    if stack.ndim != 3:
        raise ValueError("all images must be 2-D and equally sized")
    return stack.mean(axis=0)


def subaperture_covariance(pixel_vector, L: int) -> np.ndarray:
    """Spatially smoothed covariance of one pixel's channel vector.

    Averages outer products of the N - L + 1 sliding subvectors of
    length L.
    """
    x = np.asarray(pixel_vector, dtype=float).ravel()
    n = x.size
    if not 1 <= L <= n:
        raise ValueError(f"subaperture length {L} out of range [1, {n}]")
    windows = np.lib.stride_tricks.sliding_window_view(x, L)  # (n-L+1, L)
    return windows.T @ windows / windows.shape[0]


def diagonal_load(R, loading_factor: float) -> np.ndarray:
    """Add ``loading_factor * trace(R) / L`` times the identity."""
    R = np.asarray(R, dtype=float)
    if loading_factor < 0:
        raise ValueError("loading_factor must be >= 0")
    L = R.shape[0]
    return R + (loading_factor * np.trace(R) / L) * np.eye(L)


def mvdr_weights(R) -> np.ndarray:
    """Distortionless minimum-power weights for an all-ones steering vector.

    Solves min w'Rw subject to sum(w) = 1 through a Cholesky
    factorization; the closed form is R^-1 a / (a' R^-1 a).

    Raises
    ------
    NumericalError
        If R is not positive definite or its condition number exceeds
        1e12; increase the diagonal loading in that case.
    """
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError("R must be a square matrix")
    ones = np.ones(R.shape[0])
    try:
        factor = scipy.linalg.cho_factor(R, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(
            "covariance is not positive definite; increase the diagonal loading factor"
        ) from exc
    if np.linalg.cond(R) > MAX_CONDITION:
        raise NumericalError(
            "covariance condition number exceeds 1e12; increase the diagonal loading factor"
        )
    y = scipy.linalg.cho_solve(factor, ones)
    return y / float(ones @ y)


def _batched_spd_solve_ones(R: np.ndarray) -> np.ndarray:
    """Solve R y = ones for a (P, L, L) stack via batched Cholesky."""
    P, L, _ = R.shape
    chol = np.linalg.cholesky(R)  # raises LinAlgError if any pixel fails
    # Forward substitution: chol z = 1, then back substitution: chol' y = z.
    z = np.empty((P, L))
    for i in range(L):
        acc = np.einsum("pj,pj->p", chol[:, i, :i], z[:, :i]) if i else 0.0
        z[:, i] = (1.0 - acc) / chol[:, i, i]
    y = np.empty((P, L))
    for i in range(L - 1, -1, -1):
        acc = np.einsum("pj,pj->p", chol[:, i + 1 :, i], y[:, i + 1 :]) if i < L - 1 else 0.0
        y[:, i] = (z[:, i] - acc) / chol[:, i, i]
    return y


def mvdr_beamform(cube, cfg: MvdrConfig) -> np.ndarray:
    """Per-pixel minimum-variance output over sliding subapertures.

    For every pixel: estimate the smoothed covariance, load its diagonal,
    solve for the distortionless weights w and emit the mean of w'x over
    the subaperture vectors x. With L = 1 this reduces exactly to
    delay-and-sum.
    """
    data = _cube_array(cube)
    H, W, N = data.shape
    L = cfg.subaperture_length
    if not 1 <= L <= N:
        raise ValueError(f"subaperture length {L} out of range [1, {N}]")
    delta = cfg.resolved_loading()

    V = data.reshape(-1, N).astype(float, copy=False)
    windows = np.lib.stride_tricks.sliding_window_view(V, L, axis=1)  # (P, M, L)
    M = windows.shape[1]
    R = np.einsum("pml,pmk->plk", windows, windows) / M
    trace = np.einsum("pll->p", R)
    idx = np.arange(L)
    R[:, idx, idx] += (delta / L) * trace[:, None]
    # A pixel with no echo at all has w' x = 0 for every weight choice;
    # give it a placeholder identity so the batched factorization passes.
    silent = trace == 0.0
    if np.any(silent):
        R[silent] = np.eye(L)

    xbar = windows.mean(axis=1)  # (P, L)
    try:
        y = _batched_spd_solve_ones(R)
        denom = y.sum(axis=1)
        bad = ~np.isfinite(denom) | (denom == 0.0)
    except np.linalg.LinAlgError:
        y = None
        bad = None

    if y is None or np.any(bad):
        if cfg.on_singular == "raise":
            raise NumericalError(
                "minimum-variance solve failed for at least one pixel; "
                "increase the diagonal loading factor"
            )
        return _mvdr_beamform_pixelwise(V, R, xbar).reshape(H, W)

    w = y / denom[:, None]
    out = np.einsum("pl,pl->p", w, xbar)
    return out.reshape(H, W)


def _mvdr_beamform_pixelwise(V, R, xbar) -> np.ndarray:
    """Slow path: solve pixel by pixel, substituting the uniform-weight
    output where the factorization fails."""
    P, L = xbar.shape
    out = np.empty(P)
    ones = np.ones(L)
    for p in range(P):
        try:
            factor = scipy.linalg.cho_factor(R[p], lower=True)
            y = scipy.linalg.cho_solve(factor, ones)
            denom = float(ones @ y)
            if not np.isfinite(denom) or denom == 0.0:
                raise scipy.linalg.LinAlgError("degenerate solve")
            out[p] = (y / denom) @ xbar[p]
        except scipy.linalg.LinAlgError:
            out[p] = V[p].mean()
    return out
