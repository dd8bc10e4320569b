"""Building blocks of the learned apodization network.

Every layer here has an explicit forward pass and a matching analytic
backward pass; no autograd framework is involved. Arrays are channel-last:
(batch, height, width, channels), with 3-D inputs lifted to a singleton
batch where noted. Layers preserve the dtype of their inputs so the same
code serves the 32-bit training path and the 64-bit gradient-check path.
"""

from dataclasses import dataclass

import numpy as np

NORM_EPS = 1e-12


@dataclass
class ConvLayer:
    """Same-padding 2-D cross-correlation parameters.

    ``kernels`` has shape (K, K, in_channels, out_channels), ``bias``
    shape (out_channels,).
    """

    kernels: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kernels)
        b = np.asarray(self.bias)
        if k.ndim != 4 or k.shape[0] != k.shape[1]:
            raise ValueError("kernels must have shape (K, K, Cin, Cout) with square K")
        if k.shape[0] % 2 != 1:
            raise ValueError("kernel size must be odd for same padding")
        if b.shape != (k.shape[3],):
            raise ValueError("bias must have one entry per output channel")
        self.kernels = k
        self.bias = b

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[2]

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[3]


@dataclass
class BatchNormParams:
    """Per-feature scale/shift plus running statistics.

    ``momentum`` is the fraction of the previous running value retained
    at each training-mode update; running variance is the population
    (ddof = 0) variance.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_variance: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must be in (0, 1)")
        if np.any(np.asarray(self.running_variance) < 0):
            raise ValueError("running_variance must be non-negative")

    @classmethod
    def create(cls, num_features: int, epsilon: float = 1e-5, momentum: float = 0.9,
               dtype=np.float32) -> "BatchNormParams":
        return cls(
            gamma=np.ones(num_features, dtype=dtype),
            beta=np.zeros(num_features, dtype=dtype),
            running_mean=np.zeros(num_features, dtype=dtype),
            running_variance=np.ones(num_features, dtype=dtype),
            epsilon=epsilon,
            momentum=momentum,
        )


def _as_batched(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError("expected (H, W, C) or (B, H, W, C) input")


def _conv_core(xb: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Same-padding cross-correlation of (B,H,W,Cin) with (K,K,Cin,Cout).

    Accumulates K*K batched matrix products over shifted views of the
    zero-padded input; avoids materializing gathered neighborhoods, which
    keeps temporary allocations small.
    """
    b, h, w, cin = xb.shape
    k = kernels.shape[0]
    cout = kernels.shape[3]
    p = k // 2
    if k == 1:
        return np.matmul(xb, kernels[0, 0])
    xpad = np.zeros((b, h + 2 * p, w + 2 * p, cin), dtype=xb.dtype)
    xpad[:, p : p + h, p : p + w, :] = xb
    out = np.matmul(xpad[:, 0:h, 0:w, :], kernels[0, 0])
    tmp = np.empty_like(out)
    for u in range(k):
        for v in range(k):
            if u == 0 and v == 0:
                continue
            np.matmul(xpad[:, u : u + h, v : v + w, :], kernels[u, v], out=tmp)
            out += tmp
    return out


def conv2d_forward(x, layer: ConvLayer, return_cache: bool = False):
    """Same-padding cross-correlation plus bias.

    Output spatial size equals input spatial size; zero padding of
    (K - 1) / 2 on each side.
    """
    xb, squeeze = _as_batched(x)
    if xb.shape[3] != layer.in_channels:
        raise ValueError(
            f"input has {xb.shape[3]} channels, layer expects {layer.in_channels}"
        )
    out = _conv_core(xb, layer.kernels) + layer.bias
    if squeeze:
        out = out[0]
    if return_cache:
        return out, (xb, layer, squeeze)
    return out


def conv2d_backward(grad_out, cache):
    """Gradients of a same-padding conv: returns (dx, dkernels, dbias)."""
    xb, layer, squeeze = cache
    gb, _ = _as_batched(grad_out)
    b, h, w, cout = gb.shape
    k = layer.kernel_size
    p = k // 2
    cin = layer.in_channels

    gb = np.ascontiguousarray(gb)
    gflat = gb.reshape(-1, cout)
    dbias = gflat.sum(axis=0)
    xflat = xb.reshape(-1, cin)

    if k == 1:
        dkernels = (xflat.T @ gflat).reshape(layer.kernels.shape)
        dx = np.matmul(gb, layer.kernels[0, 0].T)
    else:
        # dkernels[u,v] correlates the input with the gradient shifted by
        # (u - p, v - p); slicing a zero-padded gradient covers the edges.
        gpad = np.zeros((b, h + 2 * p, w + 2 * p, cout), dtype=gb.dtype)
        gpad[:, p : p + h, p : p + w, :] = gb
        buf = np.empty_like(gb)
        dkernels = np.empty_like(layer.kernels)
        for u in range(k):
            for v in range(k):
                np.copyto(buf, gpad[:, 2 * p - u : h + 2 * p - u, 2 * p - v : w + 2 * p - v, :])
                np.matmul(xflat.T, buf.reshape(-1, cout), out=dkernels[u, v])
        # dx is the correlation of grad_out with spatially flipped kernels,
        # input and output channel roles swapped (stride-1 same padding).
        kt = np.ascontiguousarray(layer.kernels[::-1, ::-1].transpose(0, 1, 3, 2))
        dx = _conv_core(gb, kt)
    if squeeze:
        dx = dx[0]
    return dx, dkernels, dbias


def antirectifier_forward(x, return_cache: bool = False):
    """Mean-subtract and L2-normalize each pixel's channel vector, then
    concatenate its positive and negative rectified parts (doubling C)."""
    x = np.asarray(x)
    c = x.shape[-1]
    z = x - x.mean(axis=-1, keepdims=True)
    norm = np.sqrt(np.einsum("...c,...c->...", z, z))[..., None]
    denom = np.maximum(norm, NORM_EPS)
    z /= denom
    out = np.empty(x.shape[:-1] + (2 * c,), dtype=x.dtype)
    np.maximum(z, 0.0, out=out[..., :c])
    np.minimum(z, 0.0, out=out[..., c:])
    np.negative(out[..., c:], out=out[..., c:])
    if return_cache:
        return out, (z, norm, denom)
    return out


def antirectifier_backward(grad_out, cache):
    """Gradient through rectification, normalization and mean removal."""
    z, norm, denom = cache
    c = z.shape[-1]
    gp = grad_out[..., :c]
    gq = grad_out[..., c:]
    dz = np.where(z > 0, gp, 0.0)
    dz -= np.where(z < 0, gq, 0.0)
    # Through u / max(|u|, eps): the projection term applies only where
    # the norm is above the guard; below it the map is a plain scaling.
    zdz = np.einsum("...c,...c->...", z, dz)[..., None]
    zdz *= norm > NORM_EPS
    dz -= z * zdz
    dz /= denom
    dz -= dz.mean(axis=-1, keepdims=True)
    return dz


def batchnorm_forward(x, params: BatchNormParams, training: bool, return_cache: bool = False):
    """Normalize per feature and scale-shift by gamma/beta.

    Training mode uses batch statistics over every axis but the last and
    updates the running statistics; inference mode uses the stored
    running statistics.
    """
    x = np.asarray(x)
    axes = tuple(range(x.ndim - 1))
    dt = x.dtype
    n = 1
    for a in axes:
        n *= x.shape[a]
    if training:
        mean = x.mean(axis=axes)
        # E[x^2] - E[x]^2 in one fused pass; clamp roundoff negatives.
        x2 = x.reshape(-1, x.shape[-1])
        var = np.maximum(np.einsum("nc,nc->c", x2, x2) / n - mean * mean, 0.0)
        m = params.momentum
        params.running_mean = (m * params.running_mean + (1.0 - m) * mean).astype(
            params.running_mean.dtype
        )
        params.running_variance = (m * params.running_variance + (1.0 - m) * var).astype(
            params.running_variance.dtype
        )
    else:
        mean = params.running_mean.astype(dt)
        var = params.running_variance.astype(dt)
    inv_std = 1.0 / np.sqrt(var + dt.type(params.epsilon))
    xhat = (x - mean) * inv_std
    out = params.gamma.astype(dt) * xhat + params.beta.astype(dt)
    if return_cache:
        return out, (xhat, inv_std, params.gamma.astype(dt), training)
    return out


def batchnorm_backward(grad_out, cache):
    """Returns (dx, dgamma, dbeta); dx accounts for the batch statistics
    in training mode."""
    xhat, inv_std, gamma, training = cache
    c = grad_out.shape[-1]
    g2 = grad_out.reshape(-1, c)
    x2 = xhat.reshape(-1, c)
    dgamma = np.einsum("nc,nc->c", g2, x2)
    dbeta = g2.sum(axis=0)
    gxhat = grad_out * gamma
    if not training:
        gxhat *= inv_std
        return gxhat, dgamma, dbeta
    m = g2.shape[0]
    dx = gxhat
    dx -= (gamma / m) * dbeta
    dx -= xhat * ((gamma / m) * dgamma)
    dx *= inv_std
    return dx, dgamma, dbeta


def softmax_channels(logits):
    """Numerically stabilized softmax over the channel (last) axis."""
    z = np.asarray(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(grad_out, weights):
    """Gradient of softmax given its output ``weights``."""
    inner = (grad_out * weights).sum(axis=-1, keepdims=True)
    return weights * (grad_out - inner)


def l2_normalize_pixels(cube, eps: float = NORM_EPS):
    """Scale each pixel's channel vector to unit L2 norm (zero stays zero)."""
    cube = np.asarray(cube)
    norm = np.sqrt((cube * cube).sum(axis=-1, keepdims=True))
    return cube / np.maximum(norm, eps)


def apodized_sum_forward(cube, weights):
    """Weighted channel sum along the last axis (batched or not)."""
    cube = np.asarray(cube)
    w = np.asarray(weights)
    if w.shape != cube.shape:
        raise ValueError(f"weights shape {w.shape} does not match cube {cube.shape}")
    return (w * cube).sum(axis=-1)


def apodized_sum_backward(grad_out, cube, weights):
    """Returns (dweights, dcube) for the weighted channel sum."""
    g = np.asarray(grad_out)[..., None]
    return g * np.asarray(cube), g * np.asarray(weights)


def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grad = (2.0 / diff.size) * diff
    return loss, grad
