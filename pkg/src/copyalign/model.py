"""Two-headed convolutional map predictor and its training loop.

A three-stage 3x3 backbone (8, 16, 32 channels, padding 1) reads the
spatial similarity matrix; a 3x3 two-channel head classifies every
position as on/off an alignment (the mask map) and a 2x2 three-channel
head classifies the continuation direction at every position of the
one-smaller grid (the step map). Both heads end in a channel softmax.

The joint loss is mask BCE plus a weighted direction cross-entropy that
only counts responsible positions. Training is plain SGD with momentum,
optionally end to end through the sequence encoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .datagen import StepTargets, TrainingPair
from .encoder import SequenceEncoderParams, encode_tensor
from .errors import DimensionError, NumericError
from .features import SimilarityMatrix

PROB_FLOOR = 1e-7

BACKBONE_CHANNELS = (8, 16, 32)
MASK_CHANNELS = 2
STEP_CHANNELS = 3


@dataclass
class MaskStepParams:
    conv1_w: Parameter
    conv1_b: Parameter
    conv2_w: Parameter
    conv2_b: Parameter
    conv3_w: Parameter
    conv3_b: Parameter
    mask_w: Parameter
    mask_b: Parameter
    step_w: Parameter
    step_b: Parameter

    @classmethod
    def create(cls, rng: np.random.Generator, dtype=np.float32) -> "MaskStepParams":
        c1, c2, c3 = BACKBONE_CHANNELS

        def conv(name: str, c_out: int, c_in: int, k: int) -> Parameter:
            return Parameter(name, ag.fan_in_uniform(rng, (c_out, c_in, k, k),
                                                     fan_in=c_in * k * k), dtype=dtype)

        def zeros(name: str, c_out: int) -> Parameter:
            return Parameter(name, np.zeros(c_out), dtype=dtype)

        return cls(
            conv1_w=conv("cnn.conv1_w", c1, 1, 3), conv1_b=zeros("cnn.conv1_b", c1),
            conv2_w=conv("cnn.conv2_w", c2, c1, 3), conv2_b=zeros("cnn.conv2_b", c2),
            conv3_w=conv("cnn.conv3_w", c3, c2, 3), conv3_b=zeros("cnn.conv3_b", c3),
            mask_w=conv("cnn.mask_w", MASK_CHANNELS, c3, 3),
            mask_b=zeros("cnn.mask_b", MASK_CHANNELS),
            step_w=conv("cnn.step_w", STEP_CHANNELS, c3, 2),
            step_b=zeros("cnn.step_b", STEP_CHANNELS),
        )

    def parameters(self) -> list[Parameter]:
        params = [
            self.conv1_w, self.conv1_b, self.conv2_w, self.conv2_b,
            self.conv3_w, self.conv3_b, self.mask_w, self.mask_b,
            self.step_w, self.step_b,
        ]
        ag.check_unique_names(params)
        return params


@dataclass
class MaskMap:
    """Per-position probability of lying on an alignment path."""

    values: np.ndarray


@dataclass
class StepMap:
    """Per-position continuation direction: 0 diagonal, 1 right, 2 down."""

    categories: np.ndarray
    probabilities: np.ndarray


def model_forward(s: Tensor, params: MaskStepParams) -> tuple[Tensor, Tensor]:
    """Forward pass; accepts (M, N), (B, M, N) or (B, 1, M, N) input.

    Returns channel-first probability maps: mask (..., 2, M, N) and step
    (..., 3, M-1, N-1), each softmaxed over the channel axis.
    """
    squeeze = s.ndim == 2
    if s.ndim == 2:
        x = ag.reshape(s, (1, 1) + s.shape)
    elif s.ndim == 3:
        x = ag.reshape(s, (s.shape[0], 1) + s.shape[1:])
    else:
        x = s
    m, n = x.shape[-2], x.shape[-1]
    if m < 2 or n < 2:
        raise DimensionError(
            f"similarity matrix {m}x{n} too small; need at least 2x2 for the step head"
        )
    h = ag.relu(ag.conv2d(x, params.conv1_w.tensor, params.conv1_b.tensor, padding=1))
    h = ag.relu(ag.conv2d(h, params.conv2_w.tensor, params.conv2_b.tensor, padding=1))
    h = ag.relu(ag.conv2d(h, params.conv3_w.tensor, params.conv3_b.tensor, padding=1))
    mask_logits = ag.conv2d(h, params.mask_w.tensor, params.mask_b.tensor, padding=1)
    step_logits = ag.conv2d(h, params.step_w.tensor, params.step_b.tensor, padding=0)
    mask_probs = ag.softmax(mask_logits, axis=1)
    step_probs = ag.softmax(step_logits, axis=1)
    if squeeze:
        mask_probs = ag.reshape(mask_probs, mask_probs.shape[1:])
        step_probs = ag.reshape(step_probs, step_probs.shape[1:])
    return mask_probs, step_probs


def mask_loss(mask_probs: Tensor, labels: np.ndarray) -> Tensor:
    """Binary cross-entropy over all positions, averaged per map.

    ``mask_probs`` is (2, M, N) or (B, 2, M, N) with background and
    foreground channels; ``labels`` is the binary indicator map.
    """
    probs = mask_probs if mask_probs.ndim == 4 else ag.reshape(
        mask_probs, (1,) + mask_probs.shape)
    labels = np.asarray(labels, dtype=np.float32)
    if labels.ndim == 2:
        labels = labels[None]
    batch, _, m, n = probs.shape
    if labels.shape != (batch, m, n):
        raise DimensionError(
            f"mask labels {labels.shape} do not match probabilities {probs.shape}"
        )
    weights = np.stack([1.0 - labels, labels], axis=1) / (batch * m * n)
    logp = ag.log(ag.clamp_min(probs, PROB_FLOOR))
    return ag.scale(ag.tsum(ag.mul(logp, Tensor(weights))), -1.0)


def _dense_targets(targets, shape) -> np.ndarray:
    if isinstance(targets, StepTargets):
        dense = targets.to_dense()
    else:
        dense = np.asarray(targets, dtype=np.float32)
    if dense.ndim == 3:
        dense = dense[None]
    if dense.shape != shape:
        raise DimensionError(f"step targets {dense.shape} do not match {shape}")
    return dense


def step_loss(step_probs: Tensor, targets) -> Tensor:
    """Cross-entropy over responsible positions only.

    Each map is normalized by its own target mass; maps with no
    responsible positions contribute zero loss. ``targets`` may be a
    ``StepTargets`` or a dense (3, M-1, N-1) / (B, 3, M-1, N-1) array.
    """
    probs = step_probs if step_probs.ndim == 4 else ag.reshape(
        step_probs, (1,) + step_probs.shape)
    dense = _dense_targets(targets, probs.shape)
    batch = dense.shape[0]
    mass = dense.sum(axis=(1, 2, 3), keepdims=True)
    weights = dense / np.maximum(mass, 1.0) / batch
    logp = ag.log(ag.clamp_min(probs, PROB_FLOOR))
    return ag.scale(ag.tsum(ag.mul(logp, Tensor(weights))), -1.0)


def total_loss(l_mask, l_step, balance: float = 1.0):
    """Combined objective: mask loss plus ``balance`` times step loss."""
    if isinstance(l_mask, Tensor) or isinstance(l_step, Tensor):
        return ag.add(l_mask, ag.scale(l_step, balance))
    return l_mask + balance * l_step


def predict_maps(s, params: MaskStepParams) -> tuple[MaskMap, StepMap]:
    """Inference on one similarity matrix: mask values and step categories."""
    values = s.values if isinstance(s, SimilarityMatrix) else np.asarray(s)
    mask_probs, step_probs = model_forward(Tensor(values, dtype=np.float32), params)
    mask = MaskMap(values=mask_probs.data[1].copy())
    categories = np.argmax(step_probs.data, axis=0).astype(np.int64)
    return mask, StepMap(categories=categories, probabilities=step_probs.data.copy())


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainSchedule:
    """SGD schedule; the learning rate drops for the second half of training."""

    epochs: int = 8
    lr_initial: float = 5e-4
    lr_final: float = 5e-5
    momentum: float = 0.9
    weight_decay: float = 1e-5
    loss_balance: float = 1.0
    batch_size: int = 16
    seed: int = 7


@dataclass
class TrainResult:
    epoch_losses: list
    steps: int


def _stack_pairs(pairs: list[TrainingPair]):
    anchors = np.stack([p.anchor.frames for p in pairs])
    positives = np.stack([p.positive.frames for p in pairs])
    masks = np.stack([p.mask_label.astype(np.float32) for p in pairs])
    steps = np.stack([p.step_targets.to_dense() for p in pairs])
    return anchors, positives, masks, steps


def train(pairs: list[TrainingPair], encoder_params: SequenceEncoderParams | None,
          model_params: MaskStepParams, schedule: TrainSchedule | None = None,
          steps_limit: int | None = None) -> TrainResult:
    """Joint SGD training of the map predictor (and encoder, when given).

    Gradients flow from both losses through the similarity matrix into
    the encoder. Raises ``NumericError`` on divergence.
    """
    if not pairs:
        raise NumericError("empty training dataset")
    schedule = schedule or TrainSchedule()
    anchors, positives, masks, steps = _stack_pairs(pairs)
    params = list(model_params.parameters())
    if encoder_params is not None:
        params = encoder_params.parameters() + params
    ag.check_unique_names(params)

    rng = np.random.default_rng(schedule.seed)
    count = len(pairs)
    half = schedule.epochs // 2
    epoch_losses = []
    total_steps = 0
    for epoch in range(schedule.epochs):
        lr = schedule.lr_initial if epoch < half else schedule.lr_final
        order = rng.permutation(count)
        batch_losses = []
        for start in range(0, count, schedule.batch_size):
            sel = order[start:start + schedule.batch_size]
            loss = _train_step(anchors[sel], positives[sel], masks[sel], steps[sel],
                               encoder_params, model_params, params, lr, schedule)
            if not np.isfinite(loss):
                raise NumericError(
                    f"loss diverged to {loss} at epoch {epoch + 1}, step {total_steps + 1}"
                )
            batch_losses.append(loss)
            total_steps += 1
            if steps_limit is not None and total_steps >= steps_limit:
                epoch_losses.append(float(np.mean(batch_losses)))
                return TrainResult(epoch_losses, total_steps)
        epoch_losses.append(float(np.mean(batch_losses)))
    return TrainResult(epoch_losses, total_steps)


def _train_step(anchors, positives, masks, steps,
                encoder_params, model_params, params, lr, schedule) -> float:
    u = Tensor(anchors)
    v = Tensor(positives)
    if encoder_params is not None:
        u = encode_tensor(u, encoder_params)
        v = encode_tensor(v, encoder_params)
    s = ag.matmul(u, ag.swap_last2(v))
    mask_probs, step_probs = model_forward(s, model_params)
    l_mask = mask_loss(mask_probs, masks)
    l_step = step_loss(step_probs, steps)
    loss = total_loss(l_mask, l_step, schedule.loss_balance)
    loss.backward()
    ag.sgd_step(params, lr=lr, momentum=schedule.momentum,
                weight_decay=schedule.weight_decay)
    value = loss.item()
    for p in params:
        p.clear_grad()
    return value
