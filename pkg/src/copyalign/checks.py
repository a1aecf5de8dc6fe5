"""Self-contained gradient verification suite.

Runs finite-difference checks (float64, central differences) against the
reverse-mode gradients of every differentiable building block and of the
full joint loss on a small training pair. Used by the `grad-check` CLI
command and by the acceptance tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor, grad_check
from .datagen import mask_label, match_set_from_origins, step_label
from .encoder import SequenceEncoderParams, encode_tensor
from .model import MaskStepParams, mask_loss, model_forward, step_loss, total_loss

OP_TOLERANCE = 1e-4
END_TO_END_TOLERANCE = 1e-3


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _rand(rng, shape, away_from_zero: float = 0.0) -> np.ndarray:
    data = rng.standard_normal(shape)
    if away_from_zero:
        # keep entries off the ReLU kink so finite differences stay clean
        data = np.where(np.abs(data) < away_from_zero,
                        away_from_zero * np.sign(data) + (data == 0) * away_from_zero,
                        data)
    return data


def _timed(name: str, tolerance: float, fn, inputs, rng,
           max_checks: int | None = None) -> CheckResult:
    start = time.monotonic()
    err = grad_check(fn, inputs, rng=rng, max_checks_per_input=max_checks)
    return CheckResult(name, err, tolerance, time.monotonic() - start)


def run_op_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    a = Tensor(_rand(rng, (3, 3)), requires_grad=True, dtype=np.float64)
    b = Tensor(_rand(rng, (3, 3)), requires_grad=True, dtype=np.float64)
    results.append(_timed("matmul", OP_TOLERANCE, ag.matmul, [a, b], rng))

    x = Tensor(_rand(rng, (2, 5, 5)), requires_grad=True, dtype=np.float64)
    w = Tensor(_rand(rng, (3, 2, 3, 3)), requires_grad=True, dtype=np.float64)
    bias = Tensor(_rand(rng, (3,)), requires_grad=True, dtype=np.float64)
    results.append(_timed(
        "conv2d 3x3/p1", OP_TOLERANCE,
        lambda xx, ww, bb: ag.conv2d(xx, ww, bb, padding=1), [x, w, bias], rng))

    w2 = Tensor(_rand(rng, (3, 2, 2, 2)), requires_grad=True, dtype=np.float64)
    results.append(_timed(
        "conv2d 2x2/p0", OP_TOLERANCE,
        lambda xx, ww, bb: ag.conv2d(xx, ww, bb, padding=0), [x, w2, bias], rng))

    r = Tensor(_rand(rng, (4, 4), away_from_zero=0.05), requires_grad=True,
               dtype=np.float64)
    results.append(_timed("relu", OP_TOLERANCE, ag.relu, [r], rng))

    s = Tensor(_rand(rng, (3, 4, 4)), requires_grad=True, dtype=np.float64)
    results.append(_timed(
        "softmax(channels)", OP_TOLERANCE,
        lambda xx: ag.softmax(xx, axis=0), [s], rng))

    ln_x = Tensor(_rand(rng, (4, 8)), requires_grad=True, dtype=np.float64)
    ln_g = Tensor(1.0 + 0.1 * _rand(rng, (8,)), requires_grad=True, dtype=np.float64)
    ln_b = Tensor(0.1 * _rand(rng, (8,)), requires_grad=True, dtype=np.float64)
    results.append(_timed("layer_norm", OP_TOLERANCE, ag.layer_norm,
                          [ln_x, ln_g, ln_b], rng))

    q = Tensor(_rand(rng, (1, 6, 8)), requires_grad=True, dtype=np.float64)
    k = Tensor(_rand(rng, (1, 6, 8)), requires_grad=True, dtype=np.float64)
    v = Tensor(_rand(rng, (1, 6, 8)), requires_grad=True, dtype=np.float64)
    results.append(_timed(
        "attention(2 heads)", OP_TOLERANCE,
        lambda qq, kk, vv: ag.scaled_dot_attention(qq, kk, vv, heads=2), [q, k, v], rng))

    return results


def run_end_to_end_check(seed: int = 0,
                         max_checks_per_tensor: int | None = None) -> CheckResult:
    """Gradient-check the full joint loss on one 8x8 training pair."""
    rng = np.random.default_rng(seed)
    encoder = SequenceEncoderParams.create(rng, model_dim=8, head_count=2,
                                           hidden_dim=16, dtype=np.float64)
    model = MaskStepParams.create(rng, dtype=np.float64)

    anchor = _rand(rng, (8, 8))
    anchor /= np.linalg.norm(anchor, axis=1, keepdims=True)
    positive = anchor + 0.1 * _rand(rng, (8, 8))
    positive /= np.linalg.norm(positive, axis=1, keepdims=True)
    match_set = match_set_from_origins(np.arange(8), np.arange(8))
    labels = mask_label(match_set).astype(np.float32)
    targets = step_label(match_set).to_dense()
    u_const = Tensor(anchor, dtype=np.float64)
    v_const = Tensor(positive, dtype=np.float64)

    params = encoder.parameters() + model.parameters()
    tensors = [p.tensor for p in params]

    def loss_fn(*_unused):
        u = encode_tensor(u_const, encoder)
        v = encode_tensor(v_const, encoder)
        s = ag.matmul(u, ag.swap_last2(v))
        mask_probs, step_probs = model_forward(s, model)
        return total_loss(mask_loss(mask_probs, labels),
                          step_loss(step_probs, targets), 1.0)

    start = time.monotonic()
    err = grad_check(loss_fn, tensors, rng=rng,
                     max_checks_per_input=max_checks_per_tensor)
    return CheckResult("joint loss on 8x8 pair", err, END_TO_END_TOLERANCE,
                       time.monotonic() - start)


def run_all_checks(seed: int = 0) -> list[CheckResult]:
    results = run_op_checks(seed)
    results.append(run_end_to_end_check(seed))
    return results
