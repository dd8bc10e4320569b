"""Synthetic plane-wave channel data from point-scatterer phantoms.

Direct time-domain summation of a Gaussian-modulated transmit pulse over
scatterers: exact, linear in amplitudes, and fast enough at desk scale.
No attenuation, directivity or nonlinear propagation is modeled.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import AcquisitionParams, PlaneWaveTx, Probe, element_positions, rx_delay, tx_delay
from .tofc import RfFrame

MAX_SCATTERERS = 200_000


@dataclass(frozen=True)
class Scatterer:
    x_lat: float
    z_ax: float
    amplitude: float = 1.0

    def __post_init__(self):
        if self.z_ax <= 0:
            raise ValueError("scatterer depth must be positive")


@dataclass(frozen=True)
class Phantom:
    scatterers: tuple
    label: str = ""

    def __init__(self, scatterers, label: str = ""):
        object.__setattr__(self, "scatterers", tuple(scatterers))
        object.__setattr__(self, "label", label)

    def __len__(self):
        return len(self.scatterers)

    def positions(self) -> np.ndarray:
        """Scatterer coordinates as an (n, 2) array of (x, z)."""
        return np.array([[s.x_lat, s.z_ax] for s in self.scatterers], dtype=float).reshape(-1, 2)

    def amplitudes(self) -> np.ndarray:
        return np.array([s.amplitude for s in self.scatterers], dtype=float)


@dataclass(frozen=True)
class PulseSpec:
    """Gaussian-modulated cosine transmit pulse.

    The envelope width is chosen so the -6 dB spectral width equals
    ``fractional_bandwidth * center_frequency``; the pulse is truncated
    to zero beyond ``cycles_cutoff`` carrier periods from its center.
    """

    center_frequency: float
    fractional_bandwidth: float = 0.67
    cycles_cutoff: int = 3

    def __post_init__(self):
        if self.center_frequency <= 0:
            raise ValueError("center_frequency must be positive")
        if not (0.0 < self.fractional_bandwidth <= 1.0):
            raise ValueError("fractional_bandwidth must be in (0, 1]")
        if self.cycles_cutoff < 1:
            raise ValueError("cycles_cutoff must be >= 1")

    @property
    def sigma(self) -> float:
        """Envelope standard deviation in seconds."""
        f = self.center_frequency * self.fractional_bandwidth
        return math.sqrt(2.0 * math.log(2.0)) / (math.pi * f)

    @property
    def half_duration(self) -> float:
        """Truncation half-width in seconds."""
        return self.cycles_cutoff / self.center_frequency


def pulse(t, spec: PulseSpec):
    """Evaluate the transmit pulse at times ``t`` (seconds)."""
    t = np.asarray(t, dtype=float)
    s = spec.sigma
    out = np.exp(-(t * t) / (2.0 * s * s)) * np.cos(2.0 * math.pi * spec.center_frequency * t)
    return np.where(np.abs(t) <= spec.half_duration, out, 0.0)


def simulate_channel_data(
    phantom: Phantom,
    probe: Probe,
    acq: AcquisitionParams,
    tx: PlaneWaveTx,
    pulse_spec: PulseSpec | None = None,
    noise_snr_db: float | None = None,
    rng: np.random.Generator | None = None,
) -> list[RfFrame]:
    """Simulate one receive frame per transmit angle.

    Each channel signal is the superposition over scatterers of the
    transmit pulse delayed by the plane-wave transmit time plus the
    element return time. Sample n is taken at ``start_time + n / fs``.

    Parameters
    ----------
    noise_snr_db : float, optional
        When set, add white Gaussian noise at this SNR (dB) relative to
        the RMS of the clean frame. Requires ``rng``.
    """
    if noise_snr_db is not None and rng is None:
        raise ValueError("noise_snr_db requires an rng")
    if pulse_spec is None:
        pulse_spec = PulseSpec(center_frequency=probe.center_frequency)

    fs = acq.sampling_frequency
    c = acq.sound_speed
    n_samp = acq.num_samples
    n_elem = probe.num_elements
    elem_x = element_positions(probe)

    pos = phantom.positions()
    amp = phantom.amplitudes()

    # Number of samples covered by the truncated pulse on either side.
    half_w = int(math.ceil(pulse_spec.half_duration * fs)) + 1
    offsets = np.arange(-half_w, half_w + 1)

    frames = []
    for angle in tx.angles:
        data = np.zeros(n_samp * n_elem)
        if len(phantom) > 0:
            t_tx = tx_delay(pos[:, 0], pos[:, 1], angle, c)            # (K,)
            t_rx = rx_delay(pos[:, 0:1], pos[:, 1:2], elem_x[None, :], c)  # (K, E)
            arrival = t_tx[:, None] + t_rx                              # (K, E)
            latest = float(np.max(arrival)) + pulse_spec.half_duration
            if (latest - acq.start_time) * fs > n_samp - 1:
                warnings.warn(
                    "record of %d samples truncates echoes arriving up to %.3g s"
                    % (n_samp, latest),
                    stacklevel=2,
                )
            # Evaluate the pulse only inside its truncation window around
            # each arrival: sample index n = (arrival - start_time) * fs + offset.
            center = np.rint((arrival - acq.start_time) * fs).astype(np.int64)
            idx = center[:, :, None] + offsets[None, None, :]           # (K, E, W)
            t_eval = acq.start_time + idx / fs - arrival[:, :, None]
            vals = amp[:, None, None] * pulse(t_eval, pulse_spec)
            valid = (idx >= 0) & (idx < n_samp)
            flat = idx * n_elem + np.arange(n_elem)[None, :, None]
            data += np.bincount(
                flat[valid].ravel(), weights=vals[valid].ravel(), minlength=n_samp * n_elem
            )
        data = data.reshape(n_samp, n_elem)
        if noise_snr_db is not None:
            rms = float(np.sqrt(np.mean(data**2)))
            if rms > 0:
                sigma = rms * 10.0 ** (-noise_snr_db / 20.0)
                data = data + rng.normal(0.0, sigma, size=data.shape)
        frames.append(RfFrame(angle=angle, data=data, acq=acq))
    return frames


def make_point_phantom(depths, lateral=0.0, label: str = "points") -> Phantom:
    """Unit-amplitude scatterers at (lateral, depth) for each depth."""
    depths = np.atleast_1d(np.asarray(depths, dtype=float))
    lat = np.broadcast_to(np.asarray(lateral, dtype=float), depths.shape)
    scatterers = [Scatterer(x_lat=float(x), z_ax=float(z)) for x, z in zip(lat, depths)]
    return Phantom(scatterers, label=label)


def make_cyst_phantom(
    cyst_center,
    cyst_radius: float,
    background_density: float,
    extent_lateral,
    extent_axial,
    seed=None,
    rng: np.random.Generator | None = None,
    label: str = "cyst",
) -> Phantom:
    """Anechoic disk in a speckle background.

    Background scatterers are seeded uniformly over the given lateral and
    axial extents with standard-normal amplitudes; any scatterer falling
    strictly inside the cyst disk is discarded. ``background_density`` is
    in scatterers per mm^2 of the extent rectangle.

    Deterministic given ``seed`` (or a caller-provided ``rng``).
    """
    if cyst_radius <= 0:
        raise ValueError("cyst_radius must be positive")
    if background_density <= 0:
        raise ValueError("background_density must be positive")
    x0, x1 = (float(v) for v in extent_lateral)
    z0, z1 = (float(v) for v in extent_axial)
    if not (x1 > x0 and z1 > z0 and z0 > 0):
        raise ValueError("extents must be non-empty and strictly below the surface")
    area_mm2 = (x1 - x0) * (z1 - z0) * 1e6
    count = int(round(background_density * area_mm2))
    if count > MAX_SCATTERERS:
        raise ValueError(
            f"background would need {count} scatterers, above the cap {MAX_SCATTERERS}"
        )
    if rng is None:
        rng = np.random.default_rng(seed)
    xs = rng.uniform(x0, x1, size=count)
    zs = rng.uniform(z0, z1, size=count)
    amps = rng.standard_normal(count)
    cx, cz = (float(v) for v in cyst_center)
    keep = (xs - cx) ** 2 + (zs - cz) ** 2 >= cyst_radius**2
    scatterers = [
        Scatterer(x_lat=float(x), z_ax=float(z), amplitude=float(a))
        for x, z, a in zip(xs[keep], zs[keep], amps[keep])
    ]
    return Phantom(scatterers, label=label)
