"""Convolutional front-end: 128-band frames -> d_model encoder inputs.

Three causal conv + frequency-maxpool layers collapse the band axis to 1,
then a linear projection produces one d_model vector per hop. Output frame t
is a function of input frames <= t only, and the streaming path reproduces
the offline path bit-exactly (everything is computed per frame).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class ConvFrontendConfig:
    channels: tuple = (20, 40, 80)
    pools: tuple = (4, 4, 8)
    kernel: int = 3
    n_bands: int = 128

    def __post_init__(self):
        if len(self.channels) != len(self.pools):
            raise ShapeError("channels and pools must align")
        if self.kernel % 2 == 0:
            raise ShapeError("kernel size must be odd")
        if self.n_bands % math.prod(self.pools) != 0:
            raise ShapeError(f"pools {self.pools} do not divide {self.n_bands} bands")

    @property
    def out_bands(self) -> int:
        return self.n_bands // math.prod(self.pools)

    @property
    def proj_in(self) -> int:
        return self.channels[-1] * self.out_bands


@dataclass
class FrontendParams:
    convs: list  # [(kernel Tensor [Co,Ci,k,k], bias Tensor [Co]), ...]
    proj_w: Tensor  # [proj_in, d_model]
    proj_b: Tensor  # [d_model]


def frontend_forward(frames: Tensor, params: FrontendParams, cfg: ConvFrontendConfig) -> Tensor:
    """[T, n_bands] -> [T, d_model], frame-synchronous and causal."""
    if frames.data.ndim != 2 or frames.shape[1] != cfg.n_bands:
        raise ShapeError(f"expected [T, {cfg.n_bands}] input, got {frames.shape}")
    t_len = frames.shape[0]
    x = tz.reshape(frames, (1, t_len, cfg.n_bands))
    for (kern, bias), pool in zip(params.convs, cfg.pools):
        c_out = kern.shape[0]
        x = tz.conv2d(x, kern)
        x = tz.add(x, tz.reshape(bias, (c_out, 1, 1)))
        x = tz.maxpool_freq(tz.relu(x), pool)
    flat = tz.time_major(x)  # [T, proj_in]
    return tz.add(tz.matmul(flat, params.proj_w, per_row=True), params.proj_b)


class FrontendStream:
    """Incremental front-end for live input (inference only, raw numpy).

    Per-layer ring buffers hold the (kernel-1) most recent input frames, so
    each pushed frame costs the same arithmetic as the offline path and the
    outputs match it bit for bit.
    """

    def __init__(self, params: FrontendParams, cfg: ConvFrontendConfig):
        self.cfg = cfg
        self._taps = []
        self._biases = []
        self._hist = []
        k = cfg.kernel
        f_in = cfg.n_bands
        for (kern, bias), pool in zip(params.convs, cfg.pools):
            c_out, c_in, kt, kf = kern.shape
            self._taps.append([np.ascontiguousarray(kern.data[:, :, dt, df]) for dt in range(kt) for df in range(kf)])
            self._biases.append(bias.data.reshape(c_out, 1))
            self._hist.append(np.zeros((c_in, kt - 1, f_in), dtype=np.float32))
            f_in //= pool
        self._proj_w = params.proj_w.data
        self._proj_b = params.proj_b.data

    def push(self, frames: np.ndarray) -> np.ndarray:
        """[k, n_bands] new frames -> [k, d_model] outputs."""
        frames = np.asarray(frames, dtype=np.float32)
        if frames.ndim == 1:
            frames = frames[None, :]
        out = np.empty((frames.shape[0], self._proj_w.shape[1]), dtype=np.float32)
        k = self.cfg.kernel
        pf = k // 2
        for i, frame in enumerate(frames):
            x = frame[None, :]  # [C=1, F]
            for li, (taps, bias, pool) in enumerate(zip(self._taps, self._biases, self.cfg.pools)):
                hist = self._hist[li]
                win = np.concatenate([hist, x[:, None, :]], axis=1)  # [C_in, kt, F]
                self._hist[li] = win[:, 1:, :]
                winp = np.pad(win, ((0, 0), (0, 0), (pf, pf)))
                y = tz._conv_frame(winp, taps, win.shape[2]) + bias
                y = np.maximum(y, 0)
                c = y.shape[0]
                x = y.reshape(c, win.shape[2] // pool, pool).max(axis=2)
            out[i] = x.reshape(-1) @ self._proj_w + self._proj_b
        return out
