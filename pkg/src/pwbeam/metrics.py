"""Image quality metrics, evaluation cases and arithmetic-cost estimates.

Contrast-to-noise ratio is computed on the pre-log envelope with
population statistics; resolution is the full width at half the peak
amplitude (-6 dB) with linearly interpolated crossings. The per-pixel
FLOPs estimates come in three flavors: the simplified conv-chain sum, the
covariance-inversion cube for the minimum-variance reference, and an
exact count through the real layer chain.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .geometry import ImagingGrid, PlaneWaveTx
from .model import CnnConfig

MIN_REGION_PIXELS = 16
CASE_ANGLE_TOLERANCE = 1e-3  # radians, ~0.057 degrees

CASE2_OFFSET = math.radians(0.43)


@dataclass(frozen=True)
class RegionSpec:
    """Disk, annulus or rectangle region in grid coordinates (meters).

    ``center`` is (lateral, axial). Disk uses ``radius``; annulus uses
    ``radius`` (inner) and ``outer_radius``; rectangle uses ``half_width``
    (lateral) and ``half_height`` (axial).
    """

    kind: str
    center: tuple
    radius: float = 0.0
    outer_radius: float = 0.0
    half_width: float = 0.0
    half_height: float = 0.0

    def __post_init__(self):
        if self.kind not in ("disk", "annulus", "rectangle"):
            raise ValueError("kind must be disk, annulus or rectangle")
        if self.kind == "disk" and self.radius <= 0:
            raise ValueError("disk needs a positive radius")
        if self.kind == "annulus" and not 0 < self.radius < self.outer_radius:
            raise ValueError("annulus needs 0 < inner radius < outer radius")
        if self.kind == "rectangle" and (self.half_width <= 0 or self.half_height <= 0):
            raise ValueError("rectangle needs positive extents")

    def resolve(self, grid: ImagingGrid) -> np.ndarray:
        """Boolean pixel mask on the grid; requires >= 16 pixels inside."""
        cx, cz = (float(v) for v in self.center)
        lat = grid.lateral_positions[None, :] - cx
        ax = grid.axial_positions[:, None] - cz
        if self.kind == "rectangle":
            mask = (np.abs(lat) <= self.half_width) & (np.abs(ax) <= self.half_height)
        else:
            r2 = lat * lat + ax * ax
            if self.kind == "disk":
                mask = r2 <= self.radius**2
            else:
                mask = (r2 >= self.radius**2) & (r2 <= self.outer_radius**2)
        if int(mask.sum()) < MIN_REGION_PIXELS:
            raise ValueError(
                f"region resolves to {int(mask.sum())} pixels, "
                f"need >= {MIN_REGION_PIXELS}"
            )
        return mask


def cnr(envelope_image, inside: RegionSpec, outside: RegionSpec, grid: ImagingGrid) -> float:
    """Contrast-to-noise ratio in dB between two disjoint regions.

    20*log10(|mean_in - mean_out| / sqrt((var_in + var_out) / 2)) on the
    given (pre-log) envelope, population variances. A zero mean difference
    returns -inf; a zero pooled deviation is an error.
    """
    env = np.asarray(envelope_image, dtype=float)
    m_in = inside.resolve(grid)
    m_out = outside.resolve(grid)
    if np.any(m_in & m_out):
        raise ValueError("inside and outside regions overlap")
    a = env[m_in]
    b = env[m_out]
    pooled = math.sqrt((a.var() + b.var()) / 2.0)
    if pooled == 0.0:
        raise NumericalError("zero pooled deviation; regions are constant")
    diff = abs(float(a.mean() - b.mean()))
    if diff == 0.0:
        return float("-inf")
    return 20.0 * math.log10(diff / pooled)


def fwhm(profile, spacing: float) -> float:
    """Full width of a 1-D profile at half its peak amplitude.

    The profile must attain its maximum at a single interior sample; the
    two crossings nearest the peak are located by linear interpolation
    and the width is returned in the units of ``spacing``.
    """
    p = np.asarray(profile, dtype=float).ravel()
    if p.size < 3:
        raise ValueError("profile too short")
    peak_val = p.max()
    peaks = np.flatnonzero(p == peak_val)
    # An exactly tied pair can arise from mirror-symmetric data; accept a
    # contiguous plateau but reject disjoint maxima.
    if np.any(np.diff(peaks) != 1):
        raise ValueError("profile maximum is not unique")
    left_pk = int(peaks[0])
    right_pk = int(peaks[-1])
    if left_pk == 0 or right_pk == p.size - 1:
        raise ValueError("profile peaks at a boundary sample")
    level = 0.5 * peak_val

    def cross(start: int, direction: int) -> float:
        i = start
        while 0 <= i + direction < p.size:
            j = i + direction
            if p[j] < level:
                return i + direction * (p[i] - level) / (p[i] - p[j])
            i = j
        raise NumericalError(
            "no half-maximum crossing on one side; peak too close to the edge"
        )

    return (cross(right_pk, +1) - cross(left_pk, -1)) * float(spacing)


def mse(a, b) -> float:
    """Mean squared pixel difference."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def select_case_angles(case: int, available: PlaneWaveTx,
                       tolerance: float = CASE_ANGLE_TOLERANCE) -> PlaneWaveTx:
    """Angle subsets for the three evaluation cases.

    Case 1 is the zero-degree transmit alone, case 2 adds its two
    +-0.43 degree neighbors, case 3 uses every available angle. Requested
    angles are matched to the nearest available angle within ``tolerance``
    radians; a missing match is an error.
    """
    angles = np.asarray(sorted(available.angles), dtype=float)
    if case == 3:
        return PlaneWaveTx(angles)
    if case == 1:
        targets = [0.0]
    elif case == 2:
        targets = [-CASE2_OFFSET, 0.0, CASE2_OFFSET]
    else:
        raise ValueError("case must be 1, 2 or 3")
    chosen = []
    for t in targets:
        i = int(np.argmin(np.abs(angles - t)))
        if abs(angles[i] - t) > tolerance:
            raise ValueError(
                f"no available angle within {tolerance:.1e} rad of "
                f"{math.degrees(t):.2f} deg"
            )
        chosen.append(float(angles[i]))
    if len(set(chosen)) != len(chosen):
        raise ValueError("case angles resolve to duplicate transmits")
    return PlaneWaveTx(sorted(chosen))


def paper_flops_estimate(in_channels: int, hidden_filters, out_channels: int,
                         kernel_size: int) -> int:
    """Simplified per-pixel conv cost: sum of K^2 * C_i * C_{i+1} over the
    channel chain, activations and channel doubling ignored."""
    chain = [int(in_channels)] + [int(f) for f in hidden_filters] + [int(out_channels)]
    k2 = int(kernel_size) ** 2
    return sum(k2 * a * b for a, b in zip(chain, chain[1:]))


def mvdr_flops_estimate(aperture: int) -> int:
    """Covariance-inversion-dominated per-pixel cost: aperture cubed."""
    if aperture < 1:
        raise ValueError("aperture must be >= 1")
    return int(aperture) ** 3


def exact_cnn_flops(config: CnnConfig) -> int:
    """Exact per-pixel multiply-accumulate count through the layer chain,
    including the antirectifier's channel doubling."""
    k2 = config.kernel_size**2
    return sum(k2 * cin * cout for cin, cout in config.conv_channel_chain())


@dataclass(frozen=True)
class MetricsReport:
    """One evaluation row: metrics for one (case, beamformer) pair."""

    case_label: str
    beamformer: str
    cnr_db: float = float("nan")
    fwhm_axial_mm: float = float("nan")
    fwhm_lateral_mm: float = float("nan")
    mse: float = float("nan")

    def __post_init__(self):
        for name in ("fwhm_axial_mm", "fwhm_lateral_mm"):
            v = getattr(self, name)
            if not math.isnan(v) and v <= 0:
                raise ValueError(f"{name} must be positive when defined")


CSV_HEADER = "case,beamformer,cnr_dB,fwhm_axial_mm,fwhm_lateral_mm,mse"


def reports_to_csv(reports) -> str:
    """Serialize reports as the comma-separated metric table."""
    lines = [CSV_HEADER]
    for r in reports:
        lines.append(
            f"{r.case_label},{r.beamformer},{r.cnr_db:.6g},{r.fwhm_axial_mm:.6g},"
            f"{r.fwhm_lateral_mm:.6g},{r.mse:.6g}"
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ReferenceMetric:
    """Published reference row used only to annotate reports; these values
    came from different hardware and data and are not reproducible here."""

    case: int
    beamformer: str
    fwhm_axial_mm: float
    fwhm_lateral_mm: float
    cnr_db: float


REFERENCE_METRICS = (
    ReferenceMetric(1, "das", 0.388, 0.946, 6.882),
    ReferenceMetric(1, "mvdr", 0.378, 0.966, 9.105),
    ReferenceMetric(1, "fcnn", 0.407, 1.001, 2.555),
    ReferenceMetric(1, "cnn", 0.417, 0.926, 8.418),
    ReferenceMetric(2, "das", 0.404, 0.966, 7.037),
    ReferenceMetric(2, "mvdr", 0.397, 0.956, 8.925),
    ReferenceMetric(2, "fcnn", 0.417, 1.005, 4.431),
    ReferenceMetric(2, "cnn", 0.400, 0.926, 8.844),
    ReferenceMetric(3, "das", 0.455, 0.887, 8.112),
    ReferenceMetric(3, "mvdr", 0.352, 0.906, 8.522),
    ReferenceMetric(3, "fcnn", 0.401, 0.966, 9.536),
    ReferenceMetric(3, "cnn", 0.420, 0.852, 8.624),
)


def reference_metric(case: int, beamformer: str) -> ReferenceMetric:
    """Look up the published annotation row for a (case, beamformer) pair."""
    for row in REFERENCE_METRICS:
        if row.case == case and row.beamformer == beamformer:
            return row
    raise KeyError(f"no reference row for case {case}, beamformer '{beamformer}'")
