"""Contextual block-processing transformer encoder with relative positions.

The input stream is chunked into non-overlapping center blocks of n_center
frames, extended with n_left history frames and n_right look-ahead frames.
Each layer re-reads its left context from a per-layer ring buffer of the
previous layer's outputs, and a per-layer context embedding vector is handed
from each block to the next on the key/value side, carrying long-range
information. Attention scores combine content terms with a learned projection
of sinusoidal relative-offset encodings plus two bias vectors, so scoring
depends on i-j rather than absolute position.

Algorithmic latency is exactly (n_center + n_right) frames: a block's center
outputs are emitted once its look-ahead frames exist, and never change after
that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as tz
from .tensor import ShapeError, Tensor


class StreamContractError(RuntimeError):
    """Streaming calls arrived out of order (e.g. after finish())."""


@dataclass(frozen=True)
class BlockConfig:
    n_left: int = 256
    n_center: int = 16
    n_right: int = 16

    def __post_init__(self):
        if self.n_left < 0 or self.n_center < 1 or self.n_right < 0:
            raise ShapeError(f"invalid block config {self}")


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int = 9
    n_heads: int = 8
    d_model: int = 256
    d_ffn: int = 1024
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ShapeError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if self.d_model % 2 != 0:
            raise ShapeError("d_model must be even for the sinusoid table")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


class TrainContext:
    """Deterministic dropout keying: (seed, step, call counter)."""

    def __init__(self, seed: int, step: int):
        self.seed = seed
        self.step = step
        self._calls = 0

    def key(self):
        self._calls += 1
        return (self.seed, self.step, self._calls)


# ---------------------------------------------------------------------------
# parameters


@dataclass
class RelPosParams:
    wr: Tensor  # [d_model, d_model]
    u: Tensor  # [n_heads, d_head] content bias
    v: Tensor  # [n_heads, d_head] position bias

    def projected(self, max_delta: int) -> Tensor:
        """Sinusoid rows for offsets -max_delta..max_delta projected by wr."""
        table = sinusoid_table(max_delta, self.wr.shape[0], str(self.wr.dtype))
        return tz.matmul(Tensor(table), tz.transpose(self.wr))


@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    relpos: RelPosParams


@dataclass
class LayerParams:
    ln1_g: Tensor
    ln1_b: Tensor
    attn: AttentionParams
    ln2_g: Tensor
    ln2_b: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor


@dataclass
class EncoderParams:
    layers: list
    final_ln_g: Tensor
    final_ln_b: Tensor


@lru_cache(maxsize=64)
def sinusoid_table(max_delta: int, d_model: int, dtype: str = "float32") -> np.ndarray:
    """[2*max_delta+1, d_model]; row for offset delta sits at delta+max_delta.
    Even columns sin(delta * w_i), odd columns cos(delta * w_i)."""
    deltas = np.arange(-max_delta, max_delta + 1, dtype=np.float64)
    inv_freq = 1.0 / (10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model))
    args = deltas[:, None] * inv_freq[None, :]
    table = np.empty((len(deltas), d_model), dtype=np.dtype(dtype))
    table[:, 0::2] = np.sin(args)
    table[:, 1::2] = np.cos(args)
    table.setflags(write=False)
    return table


# ---------------------------------------------------------------------------
# chunking


def chunk_blocks(total: int, cfg: BlockConfig):
    """Tile [0, total) into center ranges of n_center frames with truncated
    left/right context ranges. Every frame lands in exactly one center."""
    blocks = []
    start = 0
    while start < total:
        c_end = min(start + cfg.n_center, total)
        blocks.append((
            range(max(start - cfg.n_left, 0), start),
            range(start, c_end),
            range(c_end, min(c_end + cfg.n_right, total)),
        ))
        start = c_end
    return blocks


def init_context(block_frames: Tensor) -> Tensor:
    """Initial context embedding of a block: mean over its frames, [1, d]."""
    return tz.mean_rows(block_frames)


# ---------------------------------------------------------------------------
# attention


def block_deltas(n_rows: int, query_start: int = 0) -> np.ndarray:
    """Relative offsets between query rows query_start..n-1 (plus a final
    context row) and key rows 0..n-1 (plus a final context row); the context
    row scores as offset 0 against every position."""
    q_pos = np.arange(query_start, n_rows)
    k_pos = np.arange(n_rows)
    full = np.zeros((len(q_pos) + 1, n_rows + 1), dtype=np.int64)
    full[:len(q_pos), :n_rows] = q_pos[:, None] - k_pos[None, :]
    return full


def rel_attention_scores(q: Tensor, k: Tensor, relpos: RelPosParams, head: int,
                         deltas: np.ndarray, proj: Tensor | None = None) -> Tensor:
    """Unscaled attention scores for one head:
    (q_i + u) . k_j + (q_i + v) . proj[i-j]."""
    d_head = q.shape[1]
    if proj is None:
        proj = relpos.projected(int(np.abs(deltas).max(initial=0)))
    max_delta = (proj.shape[0] - 1) // 2
    if np.abs(deltas).max(initial=0) > max_delta:
        raise IndexError(f"relative offset outside table of +-{max_delta}")
    u_h = tz.slice_axis(relpos.u, 0, head, 1)
    v_h = tz.slice_axis(relpos.v, 0, head, 1)
    p_h = tz.slice_axis(proj, 1, head * d_head, d_head)
    content = tz.matmul(tz.add(q, u_h), tz.transpose(k))
    position = tz.take_per_row(tz.matmul(tz.add(q, v_h), tz.transpose(p_h)), deltas + max_delta)
    return tz.add(content, position)


def block_attention(z: Tensor, c_q: Tensor, c_kv: Tensor, attn: AttentionParams,
                    n_heads: int, query_start: int = 0,
                    return_weights: bool = False):
    """Multi-head attention over one contextual block.

    Queries come from [z; c_q], keys/values from [z; c_kv]. Returns the rows
    aligned with z (from query_start on) and the output at the appended
    context position. query_start > 0 skips queries for history rows whose
    outputs nothing consumes; attended keys/values always cover the block.
    """
    n_rows, d_model = z.shape
    d_head = d_model // n_heads
    deltas = block_deltas(n_rows, query_start)
    q_src = z if query_start == 0 else tz.slice_axis(z, 0, query_start, n_rows - query_start)
    q_in = tz.concat([q_src, c_q], axis=0)
    kv_in = tz.concat([z, c_kv], axis=0)
    q_all = tz.add(tz.matmul(q_in, attn.wq), attn.bq)
    k_all = tz.add(tz.matmul(kv_in, attn.wk), attn.bk)
    v_all = tz.add(tz.matmul(kv_in, attn.wv), attn.bv)
    proj = attn.relpos.projected(max(n_rows - 1, 0))
    scale = 1.0 / math.sqrt(d_head)
    heads = []
    weights = []
    for h in range(n_heads):
        q_h = tz.slice_axis(q_all, 1, h * d_head, d_head)
        k_h = tz.slice_axis(k_all, 1, h * d_head, d_head)
        v_h = tz.slice_axis(v_all, 1, h * d_head, d_head)
        scores = rel_attention_scores(q_h, k_h, attn.relpos, h, deltas, proj)
        w = tz.softmax_rows(tz.mul(scores, scale))
        if return_weights:
            weights.append(w)
        heads.append(tz.matmul(w, v_h))
    rows = tz.add(tz.matmul(tz.concat(heads, axis=1), attn.wo), attn.bo)
    n_out = n_rows - query_start
    out = tz.slice_axis(rows, 0, 0, n_out)
    c_out = tz.slice_axis(rows, 0, n_out, 1)
    if return_weights:
        return out, c_out, weights
    return out, c_out


# ---------------------------------------------------------------------------
# block encoding with inherited state


@dataclass
class StreamState:
    """Carry-over between consecutive blocks of one stream."""

    hist: list  # per layer-input level: Tensor [<= n_left, d] or None
    ctx: list  # context embeddings of the previous block per level, or None
    block_index: int = 0

    @classmethod
    def initial(cls, n_layers: int) -> "StreamState":
        return cls(hist=[None] * n_layers, ctx=[None] * (n_layers + 1))


def _rows(t: Tensor | None) -> int:
    return 0 if t is None else t.shape[0]


def encode_block(block: Tensor, left_len: int, center_len: int, state: StreamState,
                 params: EncoderParams, cfg: EncoderConfig, block_cfg: BlockConfig,
                 train_ctx: TrainContext | None = None):
    """Run one contextual block through the encoder stack.

    `block` holds [left | center | right] rows of conv-frontend output, the
    left rows being exactly the current ring-buffer content. Returns the
    center rows after the final layernorm plus each layer's center rows (for
    the tempo branch), and advances `state`.
    """
    n_rows, d_model = block.shape
    if left_len != _rows(state.hist[0]):
        raise StreamContractError(f"block carries {left_len} left rows, state holds {_rows(state.hist[0])}")
    cr_len = n_rows - left_len
    if cr_len < center_len or center_len < 1:
        raise ShapeError(f"block of {n_rows} rows cannot hold {left_len} left + {center_len} center")
    zero_ctx = Tensor(np.zeros((1, d_model), dtype=block.dtype))
    rate = cfg.dropout if train_ctx is not None else 0.0

    c_q = init_context(block)
    new_ctx = [c_q]
    pushes = []
    layer_centers = []
    # only the center+right rows flow through residuals: history rows are
    # re-read from the per-layer ring buffers, never recomputed
    x_cr = tz.slice_axis(block, 0, left_len, cr_len)
    for j, layer in enumerate(params.layers):
        left = state.hist[j]
        z = tz.concat([left, x_cr], axis=0) if left is not None else x_cr
        if block_cfg.n_left > 0:
            pushes.append(tz.slice_axis(x_cr, 0, 0, center_len))
        c_kv = state.ctx[j] if state.ctx[j] is not None else zero_ctx
        zn = tz.layernorm(z, layer.ln1_g, layer.ln1_b)
        cqn = tz.layernorm(c_q, layer.ln1_g, layer.ln1_b)
        ckvn = tz.layernorm(c_kv, layer.ln1_g, layer.ln1_b)
        attn_rows, c_out = block_attention(zn, cqn, ckvn, layer.attn, cfg.n_heads,
                                           query_start=left_len)
        if rate > 0.0:
            attn_rows = tz.dropout(attn_rows, rate, key=train_ctx.key())
        x_cr = tz.add(x_cr, attn_rows)
        ffn_in = tz.layernorm(x_cr, layer.ln2_g, layer.ln2_b)
        hidden = tz.relu(tz.add(tz.matmul(ffn_in, layer.ffn_w1), layer.ffn_b1))
        ffn_out = tz.add(tz.matmul(hidden, layer.ffn_w2), layer.ffn_b2)
        if rate > 0.0:
            ffn_out = tz.dropout(ffn_out, rate, key=train_ctx.key())
        x_cr = tz.add(x_cr, ffn_out)
        c_q = c_out
        new_ctx.append(c_out)
        layer_centers.append(tz.slice_axis(x_cr, 0, 0, center_len))

    center_out = tz.layernorm(tz.slice_axis(x_cr, 0, 0, center_len), params.final_ln_g, params.final_ln_b)
    if block_cfg.n_left > 0:
        for j in range(len(params.layers)):
            prev = state.hist[j]
            grown = tz.concat([prev, pushes[j]], axis=0) if prev is not None else pushes[j]
            extra = grown.shape[0] - block_cfg.n_left
            state.hist[j] = tz.slice_axis(grown, 0, extra, block_cfg.n_left) if extra > 0 else grown
    state.ctx = new_ctx
    state.block_index += 1
    return center_out, layer_centers


# ---------------------------------------------------------------------------
# streaming session


class StreamingEncoder:
    """Feed conv-frontend frames in arbitrary chunks; center outputs appear
    once a block's look-ahead exists, identically to offline block processing."""

    def __init__(self, params: EncoderParams, cfg: EncoderConfig, block_cfg: BlockConfig,
                 train_ctx: TrainContext | None = None, collect_layers: bool = False):
        self.params = params
        self.cfg = cfg
        self.block_cfg = block_cfg
        self.train_ctx = train_ctx
        self.collect_layers = collect_layers
        self.state = StreamState.initial(cfg.n_layers)
        self.layer_centers = [[] for _ in range(cfg.n_layers)] if collect_layers else None
        self._buf: Tensor | None = None
        self._finished = False

    def stream_step(self, new_frames: Tensor | None):
        """Add frames, return center outputs of every block completed by them."""
        if self._finished:
            raise StreamContractError("stream_step after finish()")
        if new_frames is not None and new_frames.shape[0] > 0:
            if new_frames.shape[1] != self.cfg.d_model:
                raise ShapeError(f"expected [*, {self.cfg.d_model}] frames, got {new_frames.shape}")
            self._buf = new_frames if self._buf is None else tz.concat([self._buf, new_frames], axis=0)
        return self._drain(final=False)

    def finish(self):
        """Flush remaining frames as final blocks with truncated look-ahead."""
        if self._finished:
            raise StreamContractError("finish() called twice")
        self._finished = True
        return self._drain(final=True)

    def _drain(self, final: bool):
        bc = self.block_cfg
        outs = []
        while True:
            queued = _rows(self._buf)
            if queued == 0 or (not final and queued < bc.n_center + bc.n_right):
                break
            c_len = min(bc.n_center, queued)
            r_len = min(bc.n_right, queued - c_len)
            left = self.state.hist[0]
            left_len = _rows(left)
            head = tz.slice_axis(self._buf, 0, 0, c_len + r_len)
            block = tz.concat([left, head], axis=0) if left is not None else head
            center_out, layer_centers = encode_block(
                block, left_len, c_len, self.state, self.params, self.cfg, bc, self.train_ctx)
            outs.append(center_out)
            if self.collect_layers:
                for j, lc in enumerate(layer_centers):
                    self.layer_centers[j].append(lc)
            remaining = queued - c_len
            self._buf = tz.slice_axis(self._buf, 0, c_len, remaining) if remaining else None
        return outs


def encode_sequence(frames: Tensor, params: EncoderParams, cfg: EncoderConfig,
                    block_cfg: BlockConfig, train_ctx: TrainContext | None = None,
                    collect_layers: bool = False):
    """Whole-sequence block processing (same block mechanics as streaming).

    Returns ([T, d_model] outputs, per-layer center outputs or None).
    """
    session = StreamingEncoder(params, cfg, block_cfg, train_ctx, collect_layers)
    outs = session.stream_step(frames)
    outs += session.finish()
    if not outs:
        empty = Tensor(np.zeros((0, cfg.d_model), dtype=frames.dtype))
        return empty, ([empty] * cfg.n_layers if collect_layers else None)
    out = tz.concat(outs, axis=0) if len(outs) > 1 else outs[0]
    layers = None
    if collect_layers:
        layers = [tz.concat(parts, axis=0) if len(parts) > 1 else parts[0] for parts in session.layer_centers]
    return out, layers
