"""Sequence encoding and spatial similarity.

The encoder is a single transformer layer (multi-head self-attention,
post-norm residuals, one hidden feed-forward layer) applied to a
row-normalized feature sequence. No positional embedding is added; both
sequences of a pair go through the same weights. Spatial similarity is
the cosine matrix of the (re-normalized) encoded sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor
from .errors import ConfigError, DimensionError
from .features import FeatureSequence, SimilarityMatrix

DEFAULT_MODEL_DIM = 32
DEFAULT_HEAD_COUNT = 2
DEFAULT_HIDDEN_DIM = 64


@dataclass
class SequenceEncoderParams:
    head_count: int
    model_dim: int
    hidden_dim: int
    wq: Parameter
    bq: Parameter
    wk: Parameter
    bk: Parameter
    wv: Parameter
    bv: Parameter
    wo: Parameter
    bo: Parameter
    ff_w1: Parameter
    ff_b1: Parameter
    ff_w2: Parameter
    ff_b2: Parameter
    ln1_gain: Parameter
    ln1_bias: Parameter
    ln2_gain: Parameter
    ln2_bias: Parameter

    @classmethod
    def create(cls, rng: np.random.Generator,
               model_dim: int = DEFAULT_MODEL_DIM,
               head_count: int = DEFAULT_HEAD_COUNT,
               hidden_dim: int = DEFAULT_HIDDEN_DIM,
               dtype=np.float32) -> "SequenceEncoderParams":
        if model_dim % head_count != 0:
            raise ConfigError(
                f"model dim {model_dim} not divisible by head count {head_count}"
            )
        w = model_dim
        h = hidden_dim

        def proj(name: str) -> Parameter:
            return Parameter(name, ag.fan_in_uniform(rng, (w, w), fan_in=w), dtype=dtype)

        def zeros(name: str, shape) -> Parameter:
            return Parameter(name, np.zeros(shape), dtype=dtype)

        def ones(name: str, shape) -> Parameter:
            return Parameter(name, np.ones(shape), dtype=dtype)

        return cls(
            head_count=head_count, model_dim=model_dim, hidden_dim=hidden_dim,
            wq=proj("enc.wq"), bq=zeros("enc.bq", (w,)),
            wk=proj("enc.wk"), bk=zeros("enc.bk", (w,)),
            wv=proj("enc.wv"), bv=zeros("enc.bv", (w,)),
            wo=proj("enc.wo"), bo=zeros("enc.bo", (w,)),
            ff_w1=Parameter("enc.ff_w1", ag.fan_in_uniform(rng, (w, h), fan_in=w),
                            dtype=dtype),
            ff_b1=zeros("enc.ff_b1", (h,)),
            ff_w2=Parameter("enc.ff_w2", ag.fan_in_uniform(rng, (h, w), fan_in=h),
                            dtype=dtype),
            ff_b2=zeros("enc.ff_b2", (w,)),
            ln1_gain=ones("enc.ln1_gain", (w,)), ln1_bias=zeros("enc.ln1_bias", (w,)),
            ln2_gain=ones("enc.ln2_gain", (w,)), ln2_bias=zeros("enc.ln2_bias", (w,)),
        )

    def parameters(self) -> list[Parameter]:
        params = [
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
            self.ff_w1, self.ff_b1, self.ff_w2, self.ff_b2,
            self.ln1_gain, self.ln1_bias, self.ln2_gain, self.ln2_bias,
        ]
        ag.check_unique_names(params)
        return params


def encode_tensor(x: Tensor, params: SequenceEncoderParams) -> Tensor:
    """Run the encoder layer on a (B, M, W) or (M, W) tensor.

    Output rows are re-normalized to unit norm; shape is preserved.
    """
    if x.shape[-1] != params.model_dim:
        raise ConfigError(
            f"feature dim {x.shape[-1]} does not match encoder dim {params.model_dim}"
        )
    q = ag.add(ag.matmul(x, params.wq.tensor), params.bq.tensor)
    k = ag.add(ag.matmul(x, params.wk.tensor), params.bk.tensor)
    v = ag.add(ag.matmul(x, params.wv.tensor), params.bv.tensor)
    ctx = ag.scaled_dot_attention(q, k, v, params.head_count)
    attn_out = ag.add(ag.matmul(ctx, params.wo.tensor), params.bo.tensor)
    h1 = ag.layer_norm(ag.add(x, attn_out), params.ln1_gain.tensor, params.ln1_bias.tensor)
    ff = ag.add(
        ag.matmul(ag.relu(ag.add(ag.matmul(h1, params.ff_w1.tensor), params.ff_b1.tensor)),
                  params.ff_w2.tensor),
        params.ff_b2.tensor,
    )
    h2 = ag.layer_norm(ag.add(h1, ff), params.ln2_gain.tensor, params.ln2_bias.tensor)
    return ag.l2_normalize_rows(h2)


def encode_sequence(seq: FeatureSequence, params: SequenceEncoderParams) -> FeatureSequence:
    """Encode a row-normalized sequence; (M, W) in, (M, W) out."""
    out = encode_tensor(Tensor(seq.frames), params)
    return FeatureSequence(out.data, seq.timestamps, seq.fps)


def spatial_similarity(u: FeatureSequence, v: FeatureSequence) -> SimilarityMatrix:
    """Cosine similarity of every frame pair; inputs must be unit-normalized."""
    if u.dim != v.dim:
        raise DimensionError(f"feature dims differ: {u.dim} vs {v.dim}")
    return SimilarityMatrix(u.frames @ v.frames.T)
