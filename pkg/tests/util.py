"""Shared factories for tests: random parameter sets at toy scales."""

import numpy as np

from beast.encoder import AttentionParams, EncoderConfig, EncoderParams, LayerParams, RelPosParams
from beast.tensor import Tensor


def glorot(rng, shape, dtype=np.float32):
    fan_in, fan_out = shape[0], shape[-1]
    s = np.sqrt(2.0 / (fan_in + fan_out))
    return (rng.standard_normal(shape) * s).astype(dtype)


def encoder_params(cfg: EncoderConfig, seed=0, zero_relpos=False, dtype=np.float32) -> EncoderParams:
    rng = np.random.default_rng(seed)
    d, dh, h = cfg.d_model, cfg.d_head, cfg.n_heads
    layers = []
    for _ in range(cfg.n_layers):
        relpos = RelPosParams(
            wr=Tensor(np.zeros((d, d), dtype) if zero_relpos else glorot(rng, (d, d), dtype), requires_grad=True),
            u=Tensor(np.zeros((h, dh), dtype) if zero_relpos else (rng.standard_normal((h, dh)) * 0.05).astype(dtype), requires_grad=True),
            v=Tensor(np.zeros((h, dh), dtype) if zero_relpos else (rng.standard_normal((h, dh)) * 0.05).astype(dtype), requires_grad=True),
        )
        attn = AttentionParams(
            wq=Tensor(glorot(rng, (d, d), dtype), requires_grad=True),
            bq=Tensor(np.zeros(d, dtype), requires_grad=True),
            wk=Tensor(glorot(rng, (d, d), dtype), requires_grad=True),
            bk=Tensor(np.zeros(d, dtype), requires_grad=True),
            wv=Tensor(glorot(rng, (d, d), dtype), requires_grad=True),
            bv=Tensor(np.zeros(d, dtype), requires_grad=True),
            wo=Tensor(glorot(rng, (d, d), dtype), requires_grad=True),
            bo=Tensor(np.zeros(d, dtype), requires_grad=True),
            relpos=relpos,
        )
        layers.append(LayerParams(
            ln1_g=Tensor(np.ones(d, dtype), requires_grad=True),
            ln1_b=Tensor(np.zeros(d, dtype), requires_grad=True),
            attn=attn,
            ln2_g=Tensor(np.ones(d, dtype), requires_grad=True),
            ln2_b=Tensor(np.zeros(d, dtype), requires_grad=True),
            ffn_w1=Tensor(glorot(rng, (d, cfg.d_ffn), dtype), requires_grad=True),
            ffn_b1=Tensor(np.zeros(cfg.d_ffn, dtype), requires_grad=True),
            ffn_w2=Tensor(glorot(rng, (cfg.d_ffn, d), dtype), requires_grad=True),
            ffn_b2=Tensor(np.zeros(d, dtype), requires_grad=True),
        ))
    return EncoderParams(
        layers=layers,
        final_ln_g=Tensor(np.ones(d, dtype), requires_grad=True),
        final_ln_b=Tensor(np.zeros(d, dtype), requires_grad=True),
    )
