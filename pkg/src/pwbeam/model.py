"""The learned region-adaptive apodization network.

Architecture: per-pixel L2-normalized cube -> four [conv -> batch norm ->
antirectifier] blocks -> output conv -> channel softmax. The output is a
per-pixel weight vector on the channel simplex; multiplying it against the
(unnormalized) cube and summing channels yields the beamformed image. The
antirectifier doubles channels, so each conv after the first consumes
twice its block's nominal filter count.

A kernel size of 1 turns the network into a strictly per-pixel beamformer,
which serves as the fully connected baseline configuration.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensorio
from .errors import TensorFormatError
from .layers import (
    BatchNormParams,
    ConvLayer,
    antirectifier_backward,
    antirectifier_forward,
    apodized_sum_forward,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    l2_normalize_pixels,
    softmax_backward,
    softmax_channels,
)

MODEL_FORMAT_VERSION = 1
DEFAULT_HIDDEN_FILTERS = (32, 64, 64, 128)


@dataclass(frozen=True)
class CnnConfig:
    """Shape and normalization settings of the apodization network."""

    output_channels: int
    kernel_size: int = 3
    hidden_filters: tuple = DEFAULT_HIDDEN_FILTERS
    batchnorm_epsilon: float = 1e-5
    batchnorm_momentum: float = 0.9
    apply_weights_to_normalized: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_filters", tuple(int(f) for f in self.hidden_filters))
        if self.output_channels < 1:
            raise ValueError("output_channels must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd and >= 1")
        if not self.hidden_filters:
            raise ValueError("at least one hidden layer is required")
        if any(f < 1 for f in self.hidden_filters):
            raise ValueError("hidden filter counts must be >= 1")
        if any(b < a for a, b in zip(self.hidden_filters, self.hidden_filters[1:])):
            raise ValueError("hidden filter counts must be non-decreasing")
        if self.batchnorm_epsilon <= 0:
            raise ValueError("batchnorm_epsilon must be positive")
        if not 0.0 < self.batchnorm_momentum < 1.0:
            raise ValueError("batchnorm_momentum must be in (0, 1)")

    def conv_channel_chain(self) -> list:
        """(in, out) channel pairs of every conv, antirectifier doubling
        included."""
        chain = [(self.output_channels, self.hidden_filters[0])]
        for prev, cur in zip(self.hidden_filters, self.hidden_filters[1:]):
            chain.append((2 * prev, cur))
        chain.append((2 * self.hidden_filters[-1], self.output_channels))
        return chain


class CnnModel:
    """Parameter container: hidden conv/batch-norm blocks plus output conv."""

    def __init__(self, config: CnnConfig, hidden, output: ConvLayer):
        if len(hidden) != len(config.hidden_filters):
            raise ValueError("hidden block count does not match config")
        chain = config.conv_channel_chain()
        for (conv, _), (cin, cout) in zip(hidden, chain[:-1]):
            if (conv.in_channels, conv.out_channels) != (cin, cout):
                raise ValueError("hidden conv channels do not chain correctly")
        if (output.in_channels, output.out_channels) != chain[-1]:
            raise ValueError("output conv channels do not chain correctly")
        self.config = config
        self.hidden = list(hidden)
        self.output = output

    @classmethod
    def initialize(cls, config: CnnConfig, rng: np.random.Generator,
                   dtype=np.float32) -> "CnnModel":
        """He-style init: kernel variance 2 / (K^2 * fan_in), zero biases,
        unit gamma, zero beta."""
        k = config.kernel_size
        hidden = []
        chain = config.conv_channel_chain()
        for cin, cout in chain[:-1]:
            std = np.sqrt(2.0 / (k * k * cin))
            kernels = rng.normal(0.0, std, size=(k, k, cin, cout)).astype(dtype)
            conv = ConvLayer(kernels=kernels, bias=np.zeros(cout, dtype=dtype))
            bn = BatchNormParams.create(
                cout,
                epsilon=config.batchnorm_epsilon,
                momentum=config.batchnorm_momentum,
                dtype=dtype,
            )
            hidden.append((conv, bn))
        cin, cout = chain[-1]
        std = np.sqrt(2.0 / (k * k * cin))
        output = ConvLayer(
            kernels=rng.normal(0.0, std, size=(k, k, cin, cout)).astype(dtype),
            bias=np.zeros(cout, dtype=dtype),
        )
        return cls(config, hidden, output)

    @property
    def dtype(self):
        return self.output.kernels.dtype

    def parameters(self) -> dict:
        """Trainable parameters by stable name, in a fixed order."""
        params = {}
        for i, (conv, bn) in enumerate(self.hidden, start=1):
            params[f"conv{i}.kernels"] = conv.kernels
            params[f"conv{i}.bias"] = conv.bias
            params[f"bn{i}.gamma"] = bn.gamma
            params[f"bn{i}.beta"] = bn.beta
        params["conv_out.kernels"] = self.output.kernels
        params["conv_out.bias"] = self.output.bias
        return params

    def state_arrays(self) -> dict:
        """All arrays including running statistics (serialization order)."""
        arrays = {}
        for i, (conv, bn) in enumerate(self.hidden, start=1):
            arrays[f"conv{i}.kernels"] = conv.kernels
            arrays[f"conv{i}.bias"] = conv.bias
            arrays[f"bn{i}.gamma"] = bn.gamma
            arrays[f"bn{i}.beta"] = bn.beta
            arrays[f"bn{i}.running_mean"] = bn.running_mean
            arrays[f"bn{i}.running_variance"] = bn.running_variance
        arrays["conv_out.kernels"] = self.output.kernels
        arrays["conv_out.bias"] = self.output.bias
        return arrays

    def zero_output_layer(self) -> None:
        """Force uniform weights: softmax of all-zero logits."""
        self.output.kernels[...] = 0
        self.output.bias[...] = 0


def model_forward(cube, model: CnnModel, training: bool = False,
                  return_cache: bool = False):
    """Map a cube (or batch of cubes) to per-pixel apodization weights.

    The per-pixel L2 normalization feeds only the network; callers apply
    the returned weights to whatever data the configuration dictates.
    """
    x = np.asarray(cube)
    if x.shape[-1] != model.config.output_channels:
        raise ValueError(
            f"cube has {x.shape[-1]} channels, model expects "
            f"{model.config.output_channels}"
        )
    h = l2_normalize_pixels(x)
    block_caches = []
    for conv, bn in model.hidden:
        h, c_conv = conv2d_forward(h, conv, return_cache=True)
        h, c_bn = batchnorm_forward(h, bn, training, return_cache=True)
        h, c_anti = antirectifier_forward(h, return_cache=True)
        block_caches.append((c_conv, c_bn, c_anti))
    logits, c_out = conv2d_forward(h, model.output, return_cache=True)
    weights = softmax_channels(logits)
    if return_cache:
        return weights, (block_caches, c_out, weights)
    return weights


def model_backward(grad_weights, model: CnnModel, cache) -> dict:
    """Backpropagate a gradient w.r.t. the softmax output into parameter
    gradients (keyed like ``model.parameters()``)."""
    block_caches, c_out, weights = cache
    grads = {}
    g = softmax_backward(grad_weights, weights)
    g, dk, db = conv2d_backward(g, c_out)
    grads["conv_out.kernels"] = dk
    grads["conv_out.bias"] = db
    for i in range(len(model.hidden), 0, -1):
        c_conv, c_bn, c_anti = block_caches[i - 1]
        g = antirectifier_backward(g, c_anti)
        g, dgamma, dbeta = batchnorm_backward(g, c_bn)
        grads[f"bn{i}.gamma"] = dgamma
        grads[f"bn{i}.beta"] = dbeta
        g, dk, db = conv2d_backward(g, c_conv)
        grads[f"conv{i}.kernels"] = dk
        grads[f"conv{i}.bias"] = db
    return grads


def cnn_beamform(cube, model: CnnModel) -> np.ndarray:
    """Apodize the cube with the network's weights and sum channels.

    By default the weights multiply the cube exactly as given (so the
    output scales linearly with the input); with
    ``apply_weights_to_normalized`` set they multiply the per-pixel
    normalized data instead.
    """
    data = np.asarray(cube)
    weights = model_forward(data, model, training=False)
    target = l2_normalize_pixels(data) if model.config.apply_weights_to_normalized else data
    return apodized_sum_forward(target, weights)


def save_model(path, model: CnnModel, adam=None) -> None:
    """Write config, parameters and running statistics (optionally the
    optimizer state) as one tensor container. Arrays are stored as 32-bit
    reals; the on-disk order is fixed so repeated saves are byte-identical."""
    cfg = model.config
    records = {
        "config/format_version": np.array([MODEL_FORMAT_VERSION], dtype=np.float32),
        "config/kernel_size": np.array([cfg.kernel_size], dtype=np.float32),
        "config/hidden_filters": np.array(cfg.hidden_filters, dtype=np.float32),
        "config/output_channels": np.array([cfg.output_channels], dtype=np.float32),
        "config/batchnorm_epsilon": np.array([cfg.batchnorm_epsilon], dtype=np.float32),
        "config/batchnorm_momentum": np.array([cfg.batchnorm_momentum], dtype=np.float32),
        "config/apply_weights_to_normalized": np.array(
            [1.0 if cfg.apply_weights_to_normalized else 0.0], dtype=np.float32
        ),
    }
    for name, arr in model.state_arrays().items():
        records[f"model/{name}"] = arr
    if adam is not None:
        records["adam/learning_rate"] = np.array([adam.learning_rate], dtype=np.float32)
        records["adam/beta1"] = np.array([adam.beta1], dtype=np.float32)
        records["adam/beta2"] = np.array([adam.beta2], dtype=np.float32)
        records["adam/epsilon"] = np.array([adam.epsilon], dtype=np.float32)
        records["adam/step_count"] = np.array([adam.step_count], dtype=np.float32)
        for name, arr in adam.first_moment.items():
            records[f"adam/m/{name}"] = arr
        for name, arr in adam.second_moment.items():
            records[f"adam/v/{name}"] = arr
    tensorio.write_tensors(path, records)


def _scalar(records, name) -> float:
    if name not in records:
        raise TensorFormatError(f"model file is missing record '{name}'")
    return float(records[name].ravel()[0])


def load_model(path, expected_channels: int | None = None) -> CnnModel:
    """Reconstruct a model; rejects version or channel-count mismatches."""
    records = tensorio.read_tensors(path)
    version = int(round(_scalar(records, "config/format_version")))
    if version != MODEL_FORMAT_VERSION:
        raise TensorFormatError(f"unsupported model format version {version}")
    if "config/hidden_filters" not in records:
        raise TensorFormatError("model file is missing record 'config/hidden_filters'")
    config = CnnConfig(
        output_channels=int(round(_scalar(records, "config/output_channels"))),
        kernel_size=int(round(_scalar(records, "config/kernel_size"))),
        hidden_filters=tuple(
            int(round(v)) for v in records["config/hidden_filters"].ravel()
        ),
        batchnorm_epsilon=_scalar(records, "config/batchnorm_epsilon"),
        batchnorm_momentum=_scalar(records, "config/batchnorm_momentum"),
        apply_weights_to_normalized=_scalar(records, "config/apply_weights_to_normalized")
        != 0.0,
    )
    if expected_channels is not None and config.output_channels != expected_channels:
        raise TensorFormatError(
            f"model was trained for {config.output_channels} channels, "
            f"expected {expected_channels}"
        )
    k = config.kernel_size
    hidden = []
    for i, _ in enumerate(config.hidden_filters, start=1):
        try:
            conv = ConvLayer(
                kernels=records[f"model/conv{i}.kernels"],
                bias=records[f"model/conv{i}.bias"],
            )
            bn = BatchNormParams(
                gamma=records[f"model/bn{i}.gamma"],
                beta=records[f"model/bn{i}.beta"],
                running_mean=records[f"model/bn{i}.running_mean"],
                running_variance=records[f"model/bn{i}.running_variance"],
                epsilon=config.batchnorm_epsilon,
                momentum=config.batchnorm_momentum,
            )
        except KeyError as exc:
            raise TensorFormatError(f"model file is missing record {exc}") from exc
        if conv.kernel_size != k:
            raise TensorFormatError("stored kernel size does not match config")
        hidden.append((conv, bn))
    try:
        output = ConvLayer(
            kernels=records["model/conv_out.kernels"],
            bias=records["model/conv_out.bias"],
        )
    except KeyError as exc:
        raise TensorFormatError(f"model file is missing record {exc}") from exc
    try:
        return CnnModel(config, hidden, output)
    except ValueError as exc:
        raise TensorFormatError(f"inconsistent model file: {exc}") from exc


def load_optimizer(path, model: CnnModel):
    """Reconstruct the Adam state saved next to a model, or None."""
    from .training import AdamState

    records = tensorio.read_tensors(path)
    if "adam/learning_rate" not in records:
        return None
    first = {}
    second = {}
    for name in model.parameters():
        try:
            first[name] = records[f"adam/m/{name}"]
            second[name] = records[f"adam/v/{name}"]
        except KeyError as exc:
            raise TensorFormatError(f"optimizer state is missing record {exc}") from exc
    return AdamState(
        learning_rate=_scalar(records, "adam/learning_rate"),
        beta1=_scalar(records, "adam/beta1"),
        beta2=_scalar(records, "adam/beta2"),
        epsilon=_scalar(records, "adam/epsilon"),
        step_count=int(round(_scalar(records, "adam/step_count"))),
        first_moment=first,
        second_moment=second,
    )
