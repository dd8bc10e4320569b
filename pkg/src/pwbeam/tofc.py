"""Time-of-flight correction of per-angle receive frames.

Converts raw channel data into the per-pixel, per-channel cube that every
beamformer consumes: for each grid pixel and element, the frame is sampled
(linearly interpolated) at the plane-wave transmit delay plus the element
return delay. Fractional sample positions outside the record map to zero.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import AcquisitionParams, ImagingGrid, Probe, element_positions, rx_delay, tx_delay


@dataclass(frozen=True)
class RfFrame:
    """Raw receive data for one plane-wave transmit: samples x channels."""

    angle: float
    data: np.ndarray
    acq: AcquisitionParams

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError("frame data must be 2-D (samples x channels)")
        if data.shape[0] != self.acq.num_samples:
            raise ValueError(
                f"frame has {data.shape[0]} samples, acquisition says {self.acq.num_samples}"
            )
        object.__setattr__(self, "data", data)

    @property
    def num_channels(self) -> int:
        return self.data.shape[1]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


@dataclass(frozen=True)
class TofcCube:
    """Time-of-flight-corrected data: axial x lateral x channel."""

    data: np.ndarray
    grid: ImagingGrid
    angle: float

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError("cube data must be 3-D (axial x lateral x channel)")
        if data.shape[:2] != self.grid.shape:
            raise ValueError(f"cube shape {data.shape[:2]} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("cube contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def num_channels(self) -> int:
        return self.data.shape[2]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


def tof_correct(frame: RfFrame, grid: ImagingGrid, probe: Probe) -> TofcCube:
    """Resample one frame onto the grid, aligning echoes across channels.

    The fractional sample index for pixel (i, j) and element e is
    ``fs * (tx_delay + rx_delay - start_time)``; values are linearly
    interpolated, and indices outside [0, num_samples - 1] yield 0.
    """
    if frame.num_channels != probe.num_elements:
        raise ValueError(
            f"frame has {frame.num_channels} channels, probe has {probe.num_elements}"
        )
    acq = frame.acq
    c = acq.sound_speed
    fs = acq.sampling_frequency
    n_samp = acq.num_samples

    ax = grid.axial_positions[:, None]       # (H, 1)
    lat = grid.lateral_positions[None, :]    # (1, W)
    elem_x = element_positions(probe)

    t_tx = tx_delay(lat, ax, frame.angle, c)                               # (H, W)
    t_rx = rx_delay(lat[:, :, None], ax[:, :, None], elem_x[None, None, :], c)  # (H, W, E)
    pos = fs * (t_tx[:, :, None] + t_rx - acq.start_time)

    inside = (pos >= 0.0) & (pos <= n_samp - 1)
    i0 = np.floor(pos).astype(np.int64)
    np.clip(i0, 0, max(n_samp - 2, 0), out=i0)
    i1 = np.minimum(i0 + 1, n_samp - 1)
    frac = pos - i0

    cols = np.arange(probe.num_elements)[None, None, :]
    d = frame.data
    cube = (1.0 - frac) * d[i0, cols] + frac * d[i1, cols]
    cube = np.where(inside, cube, 0.0)
    return TofcCube(data=cube, grid=grid, angle=frame.angle)
