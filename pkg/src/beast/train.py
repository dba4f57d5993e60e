"""Desk-scale training on synthetic click tracks.

Whole clips train one at a time (no batching); clips over 30 s are cut into
30 s segments first. The three binary cross entropies (beat, downbeat, tempo)
are summed unweighted. The learning rate starts at 1e-3 and divides by 5
whenever validation loss has stalled for 6 epochs, floored at 1e-7.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .audio import FPS, build_filterbank, extract_features
from .encoder import BlockConfig, TrainContext
from .evaluate import f_measure, parallel_map
from .model import ModelConfig, ModelParams, init_params, model_forward
from .optim import AdamState, adam_step
from .pipeline import DbnSettings, track_clip
from .synth import FrameTargets, SyntheticClip, frame_targets
from .tensor import NumericsError, Tape, Tensor

MAX_CLIP_S = 30.0


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite."""


def multitask_loss(beat_p: Tensor, down_p: Tensor, tempo_logits: Tensor, targets: FrameTargets) -> Tensor:
    """Equal-weight sum of the three mean binary cross entropies."""
    loss = tz.bce_mean(beat_p, targets.beat)
    loss = tz.add(loss, tz.bce_mean(down_p, targets.down))
    return tz.add(loss, tz.bce_mean(tz.sigmoid(tempo_logits), targets.tempo))


class LrSchedule:
    """Divide the rate by 5 after `patience` epochs without val improvement."""

    def __init__(self, lr: float = 1e-3, patience: int = 6, factor: float = 0.2, floor: float = 1e-7):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.floor = floor
        self.best = math.inf
        self.stall = 0

    def update(self, val_loss: float) -> bool:
        """Feed one epoch's validation loss; True when the rate was reduced."""
        if val_loss < self.best - 1e-12:
            self.best = val_loss
            self.stall = 0
            return False
        self.stall += 1
        if self.stall >= self.patience:
            self.lr = max(self.lr * self.factor, self.floor)
            self.stall = 0
            return True
        return False


@dataclass
class PreparedClip:
    features: np.ndarray  # [T, 128]
    targets: FrameTargets


def prepare_clips(clips: list[SyntheticClip], cfg: ModelConfig, fb=None) -> list[PreparedClip]:
    """Extract features and frame targets; split anything over 30 s."""
    fb = fb if fb is not None else build_filterbank()
    max_frames = int(MAX_CLIP_S * FPS)
    out = []
    for clip in clips:
        feats = extract_features(clip.audio, fb)
        tgt = frame_targets(clip, len(feats), cfg.n_tempo_bins)
        for lo in range(0, len(feats), max_frames):
            hi = min(lo + max_frames, len(feats))
            if hi - lo < 8:  # ignore sliver segments
                continue
            out.append(PreparedClip(
                features=feats[lo:hi],
                targets=FrameTargets(beat=tgt.beat[lo:hi], down=tgt.down[lo:hi], tempo=tgt.tempo),
            ))
    return out


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_loss": self.val_loss, "lr": self.lr}


def train(clips: list[SyntheticClip], cfg: ModelConfig, block_cfgs: list[BlockConfig],
          epochs: int, seed: int = 0, lr: float = 1e-3, val_fraction: float = 0.1,
          params: ModelParams | None = None, log=None) -> tuple[ModelParams, TrainHistory]:
    """Train a model on synthetic clips; deterministic in `seed`.

    `block_cfgs` cycles per step, so one model can be trained to serve
    several latency settings at once.
    """
    if params is None:
        params = init_params(cfg, seed=seed)
    prepared = prepare_clips(clips, cfg)
    n_val = max(1, int(len(prepared) * val_fraction)) if len(prepared) > 1 else 0
    val_set = prepared[len(prepared) - n_val:]
    train_set = prepared[: len(prepared) - n_val]
    plist = params.parameter_list()
    opt = AdamState(plist, lr=lr)
    schedule = LrSchedule(lr=lr)
    history = TrainHistory()
    rng = np.random.default_rng(np.random.Philox(key=seed ^ 0x7A1))
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(train_set))
        losses = []
        for idx in order:
            item = train_set[idx]
            bc = block_cfgs[step % len(block_cfgs)]
            try:
                with Tape() as tape:
                    beat, down, tempo = model_forward(
                        item.features, params, bc, TrainContext(seed=seed, step=step))
                    loss = multitask_loss(beat, down, tempo, item.targets)
                loss_val = loss.item()
                params.zero_grads()
                tape.backward(loss)
                adam_step(plist, [p.grad for p in plist], opt)
            except NumericsError as e:
                raise TrainingDivergedError(f"non-finite loss at step {step}: {e}") from e
            if not math.isfinite(loss_val):
                raise TrainingDivergedError(f"non-finite loss at step {step}")
            losses.append(loss_val)
            step += 1
        val = validation_loss(params, val_set, block_cfgs[0]) if val_set else float(np.mean(losses))
        schedule.update(val)
        opt.lr = schedule.lr
        history.train_loss.append(float(np.mean(losses)) if losses else math.nan)
        history.val_loss.append(val)
        history.lr.append(schedule.lr)
        if log:
            log(f"epoch {epoch + 1}/{epochs}: train {history.train_loss[-1]:.4f} "
                f"val {val:.4f} lr {schedule.lr:.2e}")
    return params, history


def validation_loss(params: ModelParams, items: list[PreparedClip], block_cfg: BlockConfig) -> float:
    vals = []
    for item in items:
        beat, down, tempo = model_forward(item.features, params, block_cfg)
        vals.append(multitask_loss(beat, down, tempo, item.targets).item())
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# corpus-level tracking evaluation


def evaluate_tracking(params: ModelParams, clips: list[SyntheticClip], block_cfg: BlockConfig,
                      dbn: DbnSettings | None = None, fb=None) -> dict:
    """Mean per-clip beat and downbeat F1 over held-out clips, decoded through
    the live pipeline. Clips evaluate independently (BEAST_THREADS caps the
    worker pool)."""
    fb = fb if fb is not None else build_filterbank()

    def one(clip: SyntheticClip):
        result = track_clip(params, clip.audio, block_cfg, dbn, fb)
        beat_times = [b.time_s for b in result.beats]
        down_times = [b.time_s for b in result.beats if b.number == 1]
        return (f_measure(clip.beat_times, beat_times).f1,
                f_measure(clip.downbeat_times, down_times).f1)

    scores = parallel_map(one, clips)
    return {
        "beat_f1": float(np.mean([s[0] for s in scores])),
        "downbeat_f1": float(np.mean([s[1] for s in scores])),
        "n_clips": len(clips),
    }
