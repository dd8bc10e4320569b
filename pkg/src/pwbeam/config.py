"""Flat key = value pipeline configuration.

One option per line, ``#`` starts a comment, blank lines are ignored.
Unknown keys are rejected; each CLI stage checks that the keys it needs
are present. All randomness is derived from 64-bit seeds through
independent named streams so every stage is reproducible in isolation.
"""

import math
from dataclasses import dataclass

import numpy as np

from .beamform import MvdrConfig
from .errors import ConfigError
from .geometry import AcquisitionParams, ImagingGrid, PlaneWaveTx, Probe, make_grid
from .model import CnnConfig

# key -> parser (all values stored canonically typed)
_INT = ("int", int)
_FLOAT = ("float", float)
_STR = ("str", str)


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got '{text}'") from exc


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got '{text}'") from exc


def _parse_int_list(text: str) -> tuple:
    return tuple(_parse_int(part.strip()) for part in text.split(",") if part.strip())


def _parse_float_list(text: str) -> tuple:
    return tuple(_parse_float(part.strip()) for part in text.split(",") if part.strip())


def _parse_str(text: str) -> str:
    return text


_SCHEMA = {
    "probe.num_elements": _parse_int,
    "probe.pitch": _parse_float,
    "probe.center_frequency": _parse_float,
    "acq.sampling_frequency": _parse_float,
    "acq.sound_speed": _parse_float,
    "acq.num_samples": _parse_int,
    "acq.start_time": _parse_float,
    "grid.num_axial": _parse_int,
    "grid.num_lateral": _parse_int,
    "grid.spacing": _parse_float,
    "grid.axial_start": _parse_float,
    "grid.lateral_center": _parse_float,
    "tx.num_angles": _parse_int,
    "tx.span_deg": _parse_float,
    "phantom.kind": _parse_str,
    "phantom.depths": _parse_float_list,
    "phantom.lateral": _parse_float,
    "phantom.cyst_center_x": _parse_float,
    "phantom.cyst_center_z": _parse_float,
    "phantom.cyst_radius": _parse_float,
    "phantom.background_density": _parse_float,
    "phantom.noise_snr_db": _parse_float,
    "phantom.seed": _parse_int,
    "mvdr.L": _parse_int,
    "mvdr.delta": _parse_float,
    "cnn.kernel": _parse_int,
    "cnn.filters": _parse_int_list,
    "cnn.lr": _parse_float,
    "cnn.batch": _parse_int,
    "cnn.steps": _parse_int,
    "cnn.seed": _parse_int,
    "cnn.frames": _parse_int,
    "cnn.holdout": _parse_int,
    "cnn.stop_mse": _parse_float,
    "cnn.stop_max_error": _parse_float,
    "cnn.eval_every": _parse_int,
    "eval.case": _parse_int,
    "paths.rf": _parse_str,
    "paths.cubes": _parse_str,
    "paths.model": _parse_str,
    "paths.image": _parse_str,
    "paths.metrics": _parse_str,
    "paths.render": _parse_str,
}

# named random streams derived from one seed
RNG_STREAMS = {
    "phantom": 0,
    "noise": 1,
    "corpus": 2,
    "model_init": 3,
    "batches": 4,
}


def stage_rng(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for one named pipeline stage."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                               spawn_key=(RNG_STREAMS[stream],))
    )


@dataclass
class PipelineConfig:
    """Validated key-value map with typed access and domain-object builders."""

    values: dict

    @classmethod
    def parse(cls, text: str) -> "PipelineConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got '{raw.strip()}'")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if key not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown key '{key}'")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key '{key}'")
            try:
                values[key] = _SCHEMA[key](val)
            except ConfigError as exc:
                raise ConfigError(f"line {lineno}: {key}: {exc}") from exc
        return cls(values)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def serialize(self) -> str:
        lines = []
        for key in sorted(self.values):
            v = self.values[key]
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    # -- typed access ---------------------------------------------------
    def get(self, key, default=None):
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key '{key}'")
        return self.values.get(key, default)

    def require(self, *keys):
        missing = [k for k in keys if k not in self.values]
        if missing:
            raise ConfigError("missing required config keys: " + ", ".join(missing))

    def set(self, key, value):
        if key not in _SCHEMA:
            raise ConfigError(f"unknown key '{key}'")
        self.values[key] = value

    # -- domain objects --------------------------------------------------
    def probe(self) -> Probe:
        self.require("probe.num_elements", "probe.pitch", "probe.center_frequency")
        return Probe(
            num_elements=self.values["probe.num_elements"],
            pitch=self.values["probe.pitch"],
            center_frequency=self.values["probe.center_frequency"],
        )

    def acquisition(self) -> AcquisitionParams:
        self.require("acq.sampling_frequency", "acq.num_samples")
        return AcquisitionParams(
            sampling_frequency=self.values["acq.sampling_frequency"],
            sound_speed=self.get("acq.sound_speed", 1540.0),
            num_samples=self.values["acq.num_samples"],
            start_time=self.get("acq.start_time", 0.0),
        )

    def grid(self) -> ImagingGrid:
        self.require("grid.num_axial", "grid.num_lateral", "grid.axial_start")
        spacing = self.get("grid.spacing")
        if spacing is None:
            probe = self.probe()
            c = self.get("acq.sound_speed", 1540.0)
            spacing = c / probe.center_frequency / 2.0
        return make_grid(
            num_axial=self.values["grid.num_axial"],
            num_lateral=self.values["grid.num_lateral"],
            spacing=spacing,
            axial_start=self.values["grid.axial_start"],
            lateral_center=self.get("grid.lateral_center", 0.0),
        )

    def transmits(self) -> PlaneWaveTx:
        self.require("tx.num_angles", "tx.span_deg")
        n = self.values["tx.num_angles"]
        span = math.radians(self.values["tx.span_deg"])
        if n == 1:
            return PlaneWaveTx([0.0])
        return PlaneWaveTx(np.linspace(-span / 2.0, span / 2.0, n))

    def mvdr(self) -> MvdrConfig:
        probe = self.probe()
        L = self.get("mvdr.L", max(probe.num_elements // 2, 1))
        delta = self.get("mvdr.delta")
        return MvdrConfig(subaperture_length=L, loading_factor=delta)

    def cnn(self) -> CnnConfig:
        probe = self.probe()
        return CnnConfig(
            output_channels=probe.num_elements,
            kernel_size=self.get("cnn.kernel", 3),
            hidden_filters=self.get("cnn.filters", (32, 64, 64, 128)),
        )


DEFAULT_CONFIG_TEXT = """\
# Full-scale defaults: 128-channel 7.6 MHz linear array sampled at
# 31.25 MHz, half-wavelength 96 x 64 grid starting at 16 mm depth.
probe.num_elements = 128
probe.pitch = 0.0003
probe.center_frequency = 7600000
acq.sampling_frequency = 31250000
acq.sound_speed = 1540
acq.num_samples = 1280
acq.start_time = 0
grid.num_axial = 96
grid.num_lateral = 64
grid.axial_start = 0.016
tx.num_angles = 9
tx.span_deg = 16
phantom.kind = point
phantom.depths = 0.020
phantom.seed = 1234
cnn.kernel = 3
cnn.filters = 32,64,64,128
cnn.lr = 0.0001
cnn.batch = 6
cnn.steps = 2000
cnn.seed = 77
cnn.frames = 64
cnn.holdout = 4
cnn.stop_mse = 0.0001
cnn.stop_max_error = 0.01
cnn.eval_every = 50
eval.case = 1
paths.rf = rf.ubf
paths.cubes = cubes.ubf
paths.model = model.ubf
paths.image = image.ubf
paths.metrics = metrics.csv
paths.render = bmode.pgm
"""

# Reduced setup for end-to-end training runs on a workstation: fewer
# channels and smaller filters, same grid and optimizer settings.
DESK_TRAINING_OVERRIDES = {
    "probe.num_elements": 16,
    "acq.num_samples": 1152,
    "cnn.filters": (8, 16, 16, 32),
    "phantom.kind": "cyst",
    "phantom.cyst_center_x": 0.0,
    "phantom.cyst_center_z": 0.0205,
    "phantom.cyst_radius": 0.001,
    "phantom.background_density": 60.0,
}


def default_config() -> PipelineConfig:
    return PipelineConfig.parse(DEFAULT_CONFIG_TEXT)


def desk_training_config() -> PipelineConfig:
    """Default config scaled down to the 16-channel training setup."""
    cfg = default_config()
    for key, value in DESK_TRAINING_OVERRIDES.items():
        cfg.set(key, value)
    return cfg
