"""Pipeline stages shared by the command line tool and the test harness.

Each stage is a plain function of a PipelineConfig plus in-memory data, so
the chain simulate -> tof-correct -> beamform -> train -> evaluate can be
driven from files (CLI) or directly (tests) with identical behavior.
"""

import math

import numpy as np

from .beamform import compound, das_beamform, mvdr_beamform
from .config import PipelineConfig, stage_rng
from .errors import ConfigError
from .geometry import PlaneWaveTx
from .metrics import MetricsReport, RegionSpec, cnr, fwhm, mse, select_case_angles
from .model import CnnModel, cnn_beamform
from .phantom import (
    Phantom,
    Scatterer,
    make_cyst_phantom,
    make_point_phantom,
    simulate_channel_data,
)
from .postproc import envelope
from .tofc import tof_correct
from .training import AdamState, make_training_pairs, normalize_pair, train_model

BEAMFORM_METHODS = ("das", "mvdr", "cnn")

# scatterers per mm^2 drawn per cyst frame; denser backgrounds give
# smoother, more learnable speckle at higher simulation cost
CORPUS_DENSITY_RANGE = (40.0, 80.0)


def build_phantom(cfg: PipelineConfig, rng=None) -> Phantom:
    """Construct the configured phantom (point targets or anechoic cyst)."""
    kind = cfg.get("phantom.kind", "point")
    if kind == "point":
        cfg.require("phantom.depths")
        return make_point_phantom(cfg.get("phantom.depths"), lateral=cfg.get("phantom.lateral", 0.0))
    if kind == "cyst":
        cfg.require(
            "phantom.cyst_center_x",
            "phantom.cyst_center_z",
            "phantom.cyst_radius",
            "phantom.background_density",
        )
        if rng is None:
            rng = stage_rng(cfg.get("phantom.seed", 0), "phantom")
        grid = cfg.grid()
        lat = grid.lateral_positions
        ax = grid.axial_positions
        margin = 1.5e-3
        return make_cyst_phantom(
            cyst_center=(cfg.get("phantom.cyst_center_x"), cfg.get("phantom.cyst_center_z")),
            cyst_radius=cfg.get("phantom.cyst_radius"),
            background_density=cfg.get("phantom.background_density"),
            extent_lateral=(lat[0] - margin, lat[-1] + margin),
            extent_axial=(max(ax[0] - margin, 0.5e-3), ax[-1] + margin),
            rng=rng,
        )
    raise ConfigError(f"unknown phantom.kind '{kind}'")


def simulate_stage(cfg: PipelineConfig, seed=None):
    """Simulate per-angle receive frames for the configured phantom."""
    probe = cfg.probe()
    acq = cfg.acquisition()
    tx = cfg.transmits()
    if seed is None:
        seed = cfg.get("phantom.seed", 0)
    phantom = build_phantom(cfg, rng=stage_rng(seed, "phantom"))
    noise = cfg.get("phantom.noise_snr_db")
    return simulate_channel_data(
        phantom,
        probe,
        acq,
        tx,
        noise_snr_db=noise,
        rng=stage_rng(seed, "noise") if noise is not None else None,
    )


def tofc_stage(cfg: PipelineConfig, frames):
    """Time-of-flight-correct each frame onto the configured grid."""
    grid = cfg.grid()
    probe = cfg.probe()
    return [tof_correct(frame, grid, probe) for frame in frames]


def beamform_single(cube, method: str, cfg: PipelineConfig, model: CnnModel | None = None):
    """Beamform one cube with the requested method."""
    if method == "das":
        return das_beamform(cube)
    if method == "mvdr":
        return mvdr_beamform(cube, cfg.mvdr())
    if method == "cnn":
        if model is None:
            raise ConfigError("cnn beamforming needs a trained model (paths.model)")
        return cnn_beamform(np.asarray(cube, dtype=model.dtype), model)
    raise ConfigError(f"unknown beamform method '{method}'")


def case_image(cubes, case: int, method: str, cfg: PipelineConfig,
               model: CnnModel | None = None) -> np.ndarray:
    """Per-angle beamforming followed by coherent compounding of the
    case's angle subset."""
    available = PlaneWaveTx([c.angle for c in cubes])
    selected = select_case_angles(case, available)
    by_angle = {c.angle: c for c in cubes}
    images = [beamform_single(by_angle[a], method, cfg, model) for a in selected.angles]
    return compound(images)


# ---------------------------------------------------------------------------
# Training corpus
# ---------------------------------------------------------------------------

def corpus_phantom(index: int, grid, rng) -> Phantom:
    """Mixed corpus generator: two cyst frames for every point frame.

    Cyst positions, radii and densities vary per frame; point frames carry
    a handful of isolated scatterers at random positions and amplitudes.
    """
    lat = grid.lateral_positions
    ax = grid.axial_positions
    lat_span = lat[-1] - lat[0]
    ax_span = ax[-1] - ax[0]
    if index % 3 == 2:
        count = int(rng.integers(1, 6))
        xs = rng.uniform(lat[0] + 0.15 * lat_span, lat[-1] - 0.15 * lat_span, count)
        zs = rng.uniform(ax[0] + 0.15 * ax_span, ax[-1] - 0.15 * ax_span, count)
        amps = rng.uniform(0.5, 2.0, count)
        return Phantom(
            [Scatterer(float(x), float(z), float(a)) for x, z, a in zip(xs, zs, amps)],
            label=f"points-{index}",
        )
    center = (
        float(rng.uniform(lat[0] + 0.3 * lat_span, lat[-1] - 0.3 * lat_span)),
        float(rng.uniform(ax[0] + 0.3 * ax_span, ax[-1] - 0.3 * ax_span)),
    )
    radius = float(rng.uniform(0.7e-3, 1.3e-3))
    density = float(rng.uniform(*CORPUS_DENSITY_RANGE))
    margin = 1.5e-3
    return make_cyst_phantom(
        cyst_center=center,
        cyst_radius=radius,
        background_density=density,
        extent_lateral=(lat[0] - margin, lat[-1] + margin),
        extent_axial=(max(ax[0] - margin, 0.5e-3), ax[-1] + margin),
        rng=rng,
        label=f"cyst-{index}",
    )


def build_training_corpus(cfg: PipelineConfig, seed=None):
    """Simulate the mixed phantom corpus and pair each per-angle cube with
    its minimum-variance target (frame normalized).

    Returns (train_pairs, holdout_pairs). Each frame uses one transmit
    angle, cycling through the configured angle set so every angle is
    represented.
    """
    cfg.require("cnn.frames", "cnn.holdout")
    num_frames = cfg.get("cnn.frames")
    holdout = cfg.get("cnn.holdout")
    if num_frames < 1 or not 0 <= holdout < num_frames:
        raise ConfigError("cnn.frames/cnn.holdout must satisfy 0 <= holdout < frames")
    if seed is None:
        seed = cfg.get("cnn.seed", 0)
    rng = stage_rng(seed, "corpus")
    probe = cfg.probe()
    acq = cfg.acquisition()
    grid = cfg.grid()
    angles = list(cfg.transmits().angles)
    mvdr_cfg = cfg.mvdr()

    cubes = []
    for i in range(num_frames):
        phantom = corpus_phantom(i, grid, rng)
        angle = angles[i % len(angles)]
        frame = simulate_channel_data(phantom, probe, acq, PlaneWaveTx([angle]))[0]
        cubes.append(tof_correct(frame, grid, probe))
    pairs = make_training_pairs(cubes, mvdr_cfg)
    if holdout == 0:
        return pairs, []
    return pairs[:-holdout], pairs[-holdout:]


def train_stage(cfg: PipelineConfig, seed=None, log=None):
    """Build the corpus, train from scratch, and return (model, result)."""
    cfg.require("cnn.batch", "cnn.steps", "cnn.lr")
    if seed is None:
        seed = cfg.get("cnn.seed", 0)
    train_pairs, holdout_pairs = build_training_corpus(cfg, seed=seed)
    model = CnnModel.initialize(cfg.cnn(), stage_rng(seed, "model_init"))
    adam = AdamState.for_model(model, learning_rate=cfg.get("cnn.lr", 1e-4))
    result = train_model(
        model,
        train_pairs,
        holdout_pairs,
        adam,
        batch_size=cfg.get("cnn.batch", 6),
        max_steps=cfg.get("cnn.steps", 2000),
        stop_mse=cfg.get("cnn.stop_mse", 1e-4),
        stop_max_error=cfg.get("cnn.stop_max_error", 1e-2),
        eval_every=cfg.get("cnn.eval_every", 50),
        rng=stage_rng(seed, "batches"),
        log=log,
    )
    return model, result


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def default_cyst_regions(cfg: PipelineConfig):
    """Inside disk at 80% of the cyst radius, concentric annulus at
    1.2x to 1.6x for the background."""
    cx = cfg.get("phantom.cyst_center_x")
    cz = cfg.get("phantom.cyst_center_z")
    r = cfg.get("phantom.cyst_radius")
    if cx is None or cz is None or r is None:
        raise ConfigError("cyst metrics need phantom.cyst_center_*/cyst_radius")
    inside = RegionSpec(kind="disk", center=(cx, cz), radius=0.8 * r)
    outside = RegionSpec(kind="annulus", center=(cx, cz), radius=1.2 * r,
                         outer_radius=1.6 * r)
    return inside, outside


def point_target_metrics(env, grid, spacing_mm):
    """(axial FWHM, lateral FWHM) in mm through the envelope peak."""
    i, j = np.unravel_index(int(np.argmax(env)), env.shape)
    ax_prof = env[:, j]
    lat_prof = env[i, :]
    return fwhm(ax_prof, spacing_mm), fwhm(lat_prof, spacing_mm)


def evaluate_stage(cfg: PipelineConfig, cubes, methods, case: int,
                   model: CnnModel | None = None):
    """Compute the metric table rows for the requested methods on one
    prepared set of per-angle cubes.

    The mean squared error column compares each method's compounded image
    against the minimum-variance image on identical data.
    """
    grid = cfg.grid()
    kind = cfg.get("phantom.kind", "point")
    reference = case_image(cubes, case, "mvdr", cfg)
    reports = []
    for method in methods:
        image = case_image(cubes, case, method, cfg, model)
        env = envelope(image)
        cnr_db = float("nan")
        fw_ax = float("nan")
        fw_lat = float("nan")
        if kind == "cyst":
            inside, outside = default_cyst_regions(cfg)
            cnr_db = cnr(env, inside, outside, grid)
        else:
            spacing_mm = grid.axial_spacing * 1e3
            fw_ax, fw_lat = point_target_metrics(env, grid, spacing_mm)
        reports.append(
            MetricsReport(
                case_label=f"case{case}",
                beamformer=method,
                cnr_db=cnr_db,
                fwhm_axial_mm=fw_ax,
                fwhm_lateral_mm=fw_lat,
                mse=mse(image, reference),
            )
        )
    return reports
