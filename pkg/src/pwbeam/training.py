"""Training of the apodization network against minimum-variance targets.

Each training sample pairs one per-angle cube with its minimum-variance
beamformed image; both are jointly divided by the cube's root mean square
so that losses are comparable across frames. The loss is the mean squared
pixel error of the network-beamformed image, minimized with Adam; batch
statistics flow through the batch-norm layers during the forward pass.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .beamform import MvdrConfig, mvdr_beamform
from .errors import NumericalError
from .layers import apodized_sum_forward, l2_normalize_pixels, mse_loss
from .model import CnnModel, model_backward, model_forward


@dataclass
class AdamState:
    """Adam moments and hyperparameters, keyed by parameter name."""

    first_moment: dict
    second_moment: dict
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    def __post_init__(self):
        if self.step_count < 0:
            raise ValueError("step_count must be >= 0")

    @classmethod
    def for_model(cls, model: CnnModel, learning_rate: float = 1e-4, **kw) -> "AdamState":
        params = model.parameters()
        return cls(
            first_moment={k: np.zeros_like(v) for k, v in params.items()},
            second_moment={k: np.zeros_like(v) for k, v in params.items()},
            learning_rate=learning_rate,
            **kw,
        )

    def apply(self, params: dict, grads: dict) -> None:
        """One bias-corrected update, in place on the parameter arrays."""
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1**t
        correction2 = 1.0 - b2**t
        for name, p in params.items():
            g = grads[name].astype(p.dtype, copy=False)
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / correction1
            vhat = v / correction2
            p -= self.learning_rate * mhat / (np.sqrt(vhat) + self.epsilon)


def normalize_pair(cube, target):
    """Divide a cube and its target image jointly by the cube's RMS."""
    cube = np.asarray(cube)
    target = np.asarray(target)
    rms = float(np.sqrt(np.mean(np.asarray(cube, dtype=np.float64) ** 2)))
    if rms == 0.0:
        return cube, target
    return cube / rms, target / rms


def batch_loss_and_grads(cubes, targets, model: CnnModel, training: bool = True):
    """Forward the batch through the network beamformer and backpropagate
    the mean squared error. Returns (loss, per-parameter gradients).

    ``cubes`` is (B, H, W, C), ``targets`` (B, H, W), both already frame
    normalized. Runs at whatever precision the model parameters use.
    """
    weights, cache = model_forward(cubes, model, training=training, return_cache=True)
    apod_input = (
        l2_normalize_pixels(cubes) if model.config.apply_weights_to_normalized else cubes
    )
    pred = apodized_sum_forward(apod_input, weights)
    loss, dpred = mse_loss(pred, targets)
    grad_weights = dpred[..., None] * apod_input
    grads = model_backward(grad_weights, model, cache)
    return loss, grads


def train_step(batch, model: CnnModel, adam: AdamState) -> float:
    """One optimization step on a batch of (cube, target) pairs.

    Returns the pre-update loss. Pairs are assumed frame normalized
    already (see ``normalize_pair``).
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    dtype = model.dtype
    cubes = np.stack([np.asarray(c, dtype=dtype) for c, _ in batch])
    targets = np.stack([np.asarray(t, dtype=dtype) for _, t in batch])
    if cubes.ndim != 4 or targets.shape != cubes.shape[:3]:
        raise ValueError("batch cubes must be (H, W, C) with matching (H, W) targets")
    loss, grads = batch_loss_and_grads(cubes, targets, model, training=True)
    if not np.isfinite(loss):
        raise NumericalError(
            f"training loss became non-finite at step {adam.step_count + 1}; "
            "check input scaling and the learning rate"
        )
    adam.apply(model.parameters(), grads)
    return loss


def evaluate_pairs(pairs, model: CnnModel):
    """Inference-mode MSE and max pixel error over (cube, target) pairs."""
    if not pairs:
        raise ValueError("no evaluation pairs given")
    dtype = model.dtype
    total_sq = 0.0
    count = 0
    max_err = 0.0
    for cube, target in pairs:
        cube = np.asarray(cube, dtype=dtype)
        target = np.asarray(target, dtype=np.float64)
        weights = model_forward(cube, model, training=False)
        apod_input = (
            l2_normalize_pixels(cube) if model.config.apply_weights_to_normalized else cube
        )
        pred = np.asarray(apodized_sum_forward(apod_input, weights), dtype=np.float64)
        err = pred - target
        total_sq += float(np.sum(err**2))
        count += err.size
        max_err = max(max_err, float(np.max(np.abs(err))))
    return total_sq / count, max_err


@dataclass
class TrainResult:
    steps_run: int
    final_loss: float
    holdout_mse: float
    holdout_max_error: float
    loss_history: list = field(default_factory=list)
    holdout_history: list = field(default_factory=list)
    elapsed_seconds: float = 0.0


def train_model(
    model: CnnModel,
    train_pairs,
    holdout_pairs,
    adam: AdamState | None = None,
    *,
    batch_size: int = 6,
    max_steps: int = 2000,
    stop_mse: float = 1e-4,
    stop_max_error: float = 1e-2,
    eval_every: int = 50,
    rng: np.random.Generator | None = None,
    log=None,
) -> TrainResult:
    """Run batched Adam training with an early-stop criterion.

    Batches are sampled at random without replacement from ``train_pairs``.
    Every ``eval_every`` steps the held-out MSE and max pixel error are
    measured in inference mode; training stops once both fall below their
    thresholds, or at ``max_steps``.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if adam is None:
        adam = AdamState.for_model(model)
    train_pairs = list(train_pairs)
    holdout_pairs = list(holdout_pairs)
    if not train_pairs:
        raise ValueError("train_pairs must be non-empty")
    n = len(train_pairs)
    k = min(batch_size, n)

    started = time.monotonic()
    result = TrainResult(0, float("nan"), float("inf"), float("inf"))
    for step in range(1, max_steps + 1):
        picks = rng.choice(n, size=k, replace=False)
        batch = [train_pairs[i] for i in picks]
        loss = train_step(batch, model, adam)
        result.loss_history.append(loss)
        result.steps_run = step
        result.final_loss = loss
        if holdout_pairs and (step % eval_every == 0 or step == max_steps):
            mse, max_err = evaluate_pairs(holdout_pairs, model)
            result.holdout_mse = mse
            result.holdout_max_error = max_err
            result.holdout_history.append((step, mse, max_err))
            if log is not None:
                log(f"step {step}: batch loss {loss:.3e}, holdout mse {mse:.3e}, "
                    f"max err {max_err:.3e}")
            if mse <= stop_mse and max_err <= stop_max_error:
                break
    if holdout_pairs and not result.holdout_history:
        mse, max_err = evaluate_pairs(holdout_pairs, model)
        result.holdout_mse = mse
        result.holdout_max_error = max_err
        result.holdout_history.append((result.steps_run, mse, max_err))
    result.elapsed_seconds = time.monotonic() - started
    return result


def make_training_pairs(cubes, mvdr_cfg: MvdrConfig, dtype=np.float32):
    """Beamform minimum-variance targets for each cube and frame-normalize
    the (cube, target) pairs."""
    pairs = []
    for cube in cubes:
        data = np.asarray(cube, dtype=np.float64)
        target = mvdr_beamform(data, mvdr_cfg)
        c, t = normalize_pair(data, target)
        pairs.append((c.astype(dtype), t.astype(dtype)))
    return pairs
