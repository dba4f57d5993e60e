"""Full model: conv front-end, block-streaming encoder, beat/downbeat/tempo
heads, plus the named-parameter registry used for serialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .encoder import (
    AttentionParams,
    BlockConfig,
    EncoderConfig,
    EncoderParams,
    LayerParams,
    RelPosParams,
    TrainContext,
    encode_sequence,
)
from .frontend import ConvFrontendConfig, FrontendParams, frontend_forward
from .tensor import ShapeError, Tensor

TEMPO_BINS = 300  # 1 bin per BPM, 0..299
TEMPO_DROPOUT = 0.5


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    frontend: ConvFrontendConfig = field(default_factory=ConvFrontendConfig)
    n_tempo_bins: int = TEMPO_BINS

    def to_json_dict(self) -> dict:
        e, f = self.encoder, self.frontend
        return {
            "encoder": {"n_layers": e.n_layers, "n_heads": e.n_heads, "d_model": e.d_model,
                        "d_ffn": e.d_ffn, "dropout": e.dropout},
            "frontend": {"channels": list(f.channels), "pools": list(f.pools),
                         "kernel": f.kernel, "n_bands": f.n_bands},
            "n_tempo_bins": self.n_tempo_bins,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelConfig":
        f = d["frontend"]
        return cls(
            encoder=EncoderConfig(**d["encoder"]),
            frontend=ConvFrontendConfig(channels=tuple(f["channels"]), pools=tuple(f["pools"]),
                                        kernel=f["kernel"], n_bands=f["n_bands"]),
            n_tempo_bins=d["n_tempo_bins"],
        )


def toy_config(n_layers=2, d_model=32, n_heads=2, d_ffn=128,
               channels=(8, 16, 32), pools=(4, 4, 8)) -> ModelConfig:
    """Desk-scale configuration used by the training harness and tests."""
    return ModelConfig(
        encoder=EncoderConfig(n_layers=n_layers, n_heads=n_heads, d_model=d_model, d_ffn=d_ffn),
        frontend=ConvFrontendConfig(channels=channels, pools=pools),
    )


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Expected name -> shape map, in storage order."""
    shapes: dict[str, tuple] = {}
    d = cfg.encoder.d_model
    dh = cfg.encoder.d_head
    h = cfg.encoder.n_heads
    k = cfg.frontend.kernel
    c_in = 1
    for i, c_out in enumerate(cfg.frontend.channels):
        shapes[f"front.conv{i}.w"] = (c_out, c_in, k, k)
        shapes[f"front.conv{i}.b"] = (c_out,)
        c_in = c_out
    shapes["front.proj.w"] = (cfg.frontend.proj_in, d)
    shapes["front.proj.b"] = (d,)
    for i in range(cfg.encoder.n_layers):
        p = f"enc{i}"
        shapes[f"{p}.ln1.g"] = (d,)
        shapes[f"{p}.ln1.b"] = (d,)
        for name in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{name}"] = (d, d)
        for name in ("bq", "bk", "bv", "bo"):
            shapes[f"{p}.attn.{name}"] = (d,)
        shapes[f"{p}.attn.wr"] = (d, d)
        shapes[f"{p}.attn.u"] = (h, dh)
        shapes[f"{p}.attn.v"] = (h, dh)
        shapes[f"{p}.ln2.g"] = (d,)
        shapes[f"{p}.ln2.b"] = (d,)
        shapes[f"{p}.ffn.w1"] = (d, cfg.encoder.d_ffn)
        shapes[f"{p}.ffn.b1"] = (cfg.encoder.d_ffn,)
        shapes[f"{p}.ffn.w2"] = (cfg.encoder.d_ffn, d)
        shapes[f"{p}.ffn.b2"] = (d,)
    shapes["final_ln.g"] = (d,)
    shapes["final_ln.b"] = (d,)
    shapes["head.beat.w"] = (d, 1)
    shapes["head.beat.b"] = (1,)
    shapes["head.down.w"] = (d, 1)
    shapes["head.down.b"] = (1,)
    shapes["head.tempo.w"] = (d, cfg.n_tempo_bins)
    shapes["head.tempo.b"] = (cfg.n_tempo_bins,)
    return shapes


class ModelParams:
    """Named tensor map plus structured views over it."""

    def __init__(self, cfg: ModelConfig, tensors: dict[str, Tensor]):
        expected = param_shapes(cfg)
        missing = [n for n in expected if n not in tensors]
        if missing:
            raise ShapeError(f"missing parameters: {missing[:3]}")
        for name, shape in expected.items():
            if tuple(tensors[name].shape) != shape:
                raise ShapeError(f"{name}: shape {tensors[name].shape} != expected {shape}")
        self.cfg = cfg
        self.tensors = {name: tensors[name] for name in expected}  # storage order
        self.frontend = FrontendParams(
            convs=[(self.tensors[f"front.conv{i}.w"], self.tensors[f"front.conv{i}.b"])
                   for i in range(len(cfg.frontend.channels))],
            proj_w=self.tensors["front.proj.w"],
            proj_b=self.tensors["front.proj.b"],
        )
        layers = []
        for i in range(cfg.encoder.n_layers):
            p = f"enc{i}"
            g = self.tensors
            layers.append(LayerParams(
                ln1_g=g[f"{p}.ln1.g"], ln1_b=g[f"{p}.ln1.b"],
                attn=AttentionParams(
                    wq=g[f"{p}.attn.wq"], bq=g[f"{p}.attn.bq"],
                    wk=g[f"{p}.attn.wk"], bk=g[f"{p}.attn.bk"],
                    wv=g[f"{p}.attn.wv"], bv=g[f"{p}.attn.bv"],
                    wo=g[f"{p}.attn.wo"], bo=g[f"{p}.attn.bo"],
                    relpos=RelPosParams(wr=g[f"{p}.attn.wr"], u=g[f"{p}.attn.u"], v=g[f"{p}.attn.v"]),
                ),
                ln2_g=g[f"{p}.ln2.g"], ln2_b=g[f"{p}.ln2.b"],
                ffn_w1=g[f"{p}.ffn.w1"], ffn_b1=g[f"{p}.ffn.b1"],
                ffn_w2=g[f"{p}.ffn.w2"], ffn_b2=g[f"{p}.ffn.b2"],
            ))
        self.encoder = EncoderParams(
            layers=layers,
            final_ln_g=self.tensors["final_ln.g"],
            final_ln_b=self.tensors["final_ln.b"],
        )
        self.beat_w = self.tensors["head.beat.w"]
        self.beat_b = self.tensors["head.beat.b"]
        self.down_w = self.tensors["head.down.w"]
        self.down_b = self.tensors["head.down.b"]
        self.tempo_w = self.tensors["head.tempo.w"]
        self.tempo_b = self.tensors["head.tempo.b"]

    def parameter_list(self) -> list[Tensor]:
        return list(self.tensors.values())

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(np.random.Philox(key=seed))
    tensors: dict[str, Tensor] = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf in ("b", "b1", "b2", "bq", "bk", "bv", "bo"):
            data = np.zeros(shape, np.float32)
        elif leaf == "g":
            data = np.ones(shape, np.float32)
        elif leaf in ("u", "v"):
            data = (rng.standard_normal(shape) * 0.05).astype(np.float32)
        elif name.startswith("front.conv"):
            fan_in = shape[1] * shape[2] * shape[3]
            data = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
        else:
            scale = np.sqrt(2.0 / (shape[0] + shape[-1]))
            data = (rng.standard_normal(shape) * scale).astype(np.float32)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(cfg, tensors)


def model_forward(features, params: ModelParams, block_cfg: BlockConfig,
                  train_ctx: TrainContext | None = None):
    """[T, n_bands] features -> per-frame beat/downbeat probabilities [T]
    plus global tempo logits [n_tempo_bins]. Inference mode when train_ctx
    is None (no dropout); block streaming semantics apply either way."""
    cfg = params.cfg
    x = features if isinstance(features, Tensor) else Tensor(np.asarray(features, dtype=np.float32))
    if x.data.ndim != 2 or x.shape[1] != cfg.frontend.n_bands:
        raise ShapeError(f"expected [T, {cfg.frontend.n_bands}] features, got {x.shape}")
    t_len = x.shape[0]
    enc_in = frontend_forward(x, params.frontend, cfg.frontend)
    enc_out, layer_centers = encode_sequence(
        enc_in, params.encoder, cfg.encoder, block_cfg, train_ctx, collect_layers=True)
    beat = tz.reshape(tz.sigmoid(tz.add(tz.matmul(enc_out, params.beat_w), params.beat_b)), (t_len,))
    down = tz.reshape(tz.sigmoid(tz.add(tz.matmul(enc_out, params.down_w), params.down_b)), (t_len,))
    pooled = None
    for lc in layer_centers:
        m = tz.mean_rows(lc)
        pooled = m if pooled is None else tz.add(pooled, m)
    if train_ctx is not None:
        pooled = tz.dropout(pooled, TEMPO_DROPOUT, key=train_ctx.key())
    tempo = tz.reshape(tz.add(tz.matmul(pooled, params.tempo_w), params.tempo_b), (cfg.n_tempo_bins,))
    return beat, down, tempo
