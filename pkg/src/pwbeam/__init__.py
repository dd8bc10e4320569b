"""Plane-wave ultrasound beamforming toolkit.

Simulated channel data, time-of-flight correction, delay-and-sum and
regularized minimum-variance beamformers, a trainable region-adaptive
apodization network, B-mode post-processing, image quality metrics, and a
bit-exact tensor container with a pipeline CLI.
"""

from .beamform import (
    MvdrConfig,
    apodized_sum,
    compound,
    das_beamform,
    default_mvdr_config,
    diagonal_load,
    mvdr_beamform,
    mvdr_weights,
    subaperture_covariance,
)
from .errors import ConfigError, NumericalError, PwbeamError, TensorFormatError
from .geometry import (
    AcquisitionParams,
    ImagingGrid,
    PlaneWaveTx,
    Probe,
    default_grid,
    default_probe,
    element_positions,
    make_grid,
    rx_delay,
    tx_delay,
)
from .metrics import (
    MetricsReport,
    RegionSpec,
    cnr,
    exact_cnn_flops,
    fwhm,
    mse,
    mvdr_flops_estimate,
    paper_flops_estimate,
    select_case_angles,
)
from .model import CnnConfig, CnnModel, cnn_beamform, load_model, model_forward, save_model
from .phantom import (
    Phantom,
    PulseSpec,
    Scatterer,
    make_cyst_phantom,
    make_point_phantom,
    pulse,
    simulate_channel_data,
)
from .postproc import BmodeImage, bmode, envelope, hilbert_analytic, log_compress
from .tofc import RfFrame, TofcCube, tof_correct
from .training import AdamState, train_model, train_step

__version__ = "0.1.0"
