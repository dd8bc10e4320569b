"""Probe, grid and plane-wave transmit geometry.

All delay computations used by the simulator and by time-of-flight
correction live here. Conventions: axial coordinate z grows with depth
(z >= 0 at the transducer face), lateral coordinate x lies along the
array, angles are in radians, distances in meters, times in seconds.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

SOUND_SPEED_TISSUE = 1540.0  # m/s, standard soft-tissue value


@dataclass(frozen=True)
class Probe:
    """Linear-array probe description.

    Parameters
    ----------
    num_elements : int
        Number of transducer elements (channels).
    pitch : float
        Element center-to-center spacing in meters.
    center_frequency : float
        Transmit center frequency in Hz.
    """

    num_elements: int
    pitch: float
    center_frequency: float

    def __post_init__(self):
        if self.num_elements < 1:
            raise ValueError("num_elements must be >= 1")
        if self.pitch <= 0:
            raise ValueError("pitch must be positive")
        if self.center_frequency <= 0:
            raise ValueError("center_frequency must be positive")

    @property
    def aperture(self) -> float:
        """Total aperture width in meters."""
        return (self.num_elements - 1) * self.pitch


@dataclass(frozen=True)
class AcquisitionParams:
    """Receive sampling parameters.

    ``start_time`` is the acquisition time of sample 0; the transmit
    wavefront is assumed to cross z = 0 at t = 0.
    """

    sampling_frequency: float
    sound_speed: float = SOUND_SPEED_TISSUE
    num_samples: int = 1152
    start_time: float = 0.0

    def __post_init__(self):
        if self.sampling_frequency <= 0:
            raise ValueError("sampling_frequency must be positive")
        if self.sound_speed <= 0:
            raise ValueError("sound_speed must be positive")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")

    def check_nyquist(self, probe: Probe) -> None:
        """Warn when sampling is below twice the probe center frequency."""
        if self.sampling_frequency <= 2.0 * probe.center_frequency:
            warnings.warn(
                "sampling_frequency %.3g Hz is not above twice the center "
                "frequency %.3g Hz" % (self.sampling_frequency, probe.center_frequency),
                stacklevel=2,
            )


@dataclass(frozen=True)
class PlaneWaveTx:
    """Set of plane-wave steering angles, radians."""

    angles: tuple = ()

    def __init__(self, angles):
        angles = tuple(float(a) for a in np.atleast_1d(np.asarray(angles, dtype=float)))
        if len(angles) == 0:
            raise ValueError("angles must be non-empty")
        if any(abs(a) >= math.pi / 2 for a in angles):
            raise ValueError("every |angle| must be < pi/2")
        object.__setattr__(self, "angles", angles)

    def __len__(self):
        return len(self.angles)

    def __iter__(self):
        return iter(self.angles)


@dataclass(frozen=True)
class ImagingGrid:
    """Rectangular pixel grid: axial positions are rows, lateral columns.

    Both coordinate vectors must be strictly increasing and uniformly
    spaced (to 1e-12 relative).
    """

    axial_positions: np.ndarray
    lateral_positions: np.ndarray

    def __post_init__(self):
        ax = np.asarray(self.axial_positions, dtype=float)
        lat = np.asarray(self.lateral_positions, dtype=float)
        for name, v in (("axial_positions", ax), ("lateral_positions", lat)):
            if v.ndim != 1 or v.size < 1:
                raise ValueError(f"{name} must be a non-empty 1-D sequence")
            if v.size > 1:
                d = np.diff(v)
                if np.any(d <= 0):
                    raise ValueError(f"{name} must be strictly increasing")
                if np.max(np.abs(d - d[0])) > 1e-12 * max(abs(d[0]), 1e-30):
                    raise ValueError(f"{name} must be uniformly spaced")
        object.__setattr__(self, "axial_positions", ax)
        object.__setattr__(self, "lateral_positions", lat)

    @property
    def shape(self) -> tuple:
        return (self.axial_positions.size, self.lateral_positions.size)

    @property
    def axial_spacing(self) -> float:
        ax = self.axial_positions
        return float(ax[1] - ax[0]) if ax.size > 1 else 0.0

    @property
    def lateral_spacing(self) -> float:
        lat = self.lateral_positions
        return float(lat[1] - lat[0]) if lat.size > 1 else 0.0


def element_positions(probe: Probe) -> np.ndarray:
    """Lateral element coordinates, centered on the array midpoint.

    Returns x_e = (e - (N - 1) / 2) * pitch for e = 0..N-1; the mean is
    zero by construction and the layout is antisymmetric.
    """
    n = probe.num_elements
    return (np.arange(n, dtype=float) - (n - 1) / 2.0) * probe.pitch


def tx_delay(x_lat, z_ax, angle: float, c: float):
    """One-way transmit delay of a steered plane wave to a point.

    The wavefront crosses the origin at t = 0, so the arrival time at
    (x, z) is (z*cos(angle) + x*sin(angle)) / c.
    """
    return (np.asarray(z_ax) * math.cos(angle) + np.asarray(x_lat) * math.sin(angle)) / c


def rx_delay(x_lat, z_ax, element_x, c: float):
    """One-way return delay from a point back to a receive element."""
    dx = np.asarray(x_lat) - np.asarray(element_x)
    return np.sqrt(dx * dx + np.asarray(z_ax) ** 2) / c


def default_probe() -> Probe:
    """128-element linear array, 0.3 mm pitch, 7.6 MHz center frequency."""
    return Probe(num_elements=128, pitch=0.3e-3, center_frequency=7.6e6)


def default_acquisition(probe: Probe | None = None) -> AcquisitionParams:
    """31.25 MHz sampling at 1540 m/s, record long enough for the default grid."""
    return AcquisitionParams(sampling_frequency=31.25e6)


def make_grid(
    num_axial: int,
    num_lateral: int,
    spacing: float,
    axial_start: float,
    lateral_center: float = 0.0,
) -> ImagingGrid:
    """Build a uniform grid from counts, spacing and the start depth."""
    ax = axial_start + np.arange(num_axial) * spacing
    lat = (np.arange(num_lateral) - (num_lateral - 1) / 2.0) * spacing + lateral_center
    return ImagingGrid(axial_positions=ax, lateral_positions=lat)


def default_grid(probe: Probe, sound_speed: float = SOUND_SPEED_TISSUE) -> ImagingGrid:
    """Desk-scale 96 x 64 grid at half-wavelength spacing, 16 mm start depth.

    Keeps a full pipeline run under a minute while exercising every code
    path; the 16 mm start puts a 20 mm point target near mid-image.
    """
    spacing = sound_speed / probe.center_frequency / 2.0
    return make_grid(num_axial=96, num_lateral=64, spacing=spacing, axial_start=16e-3)
