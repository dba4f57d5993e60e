"""Synthetic click tracks with exact beat/downbeat annotations.

Training and evaluation substitute for real annotated music at desk scale:
decaying-sinusoid clicks on a tempo grid (downbeats louder and lower
pitched), optional white-noise floor and per-beat timing jitter, all
deterministic in the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import FPS, SAMPLE_RATE, AudioClip

CLICK_FREQ = 1320.0
DOWNBEAT_FREQ = 660.0
CLICK_GAIN = 0.5
DOWNBEAT_GAIN = 0.9
CLICK_LEN_S = 0.06
CLICK_DECAY_S = 0.015


@dataclass(frozen=True)
class SyntheticClip:
    audio: AudioClip
    beat_times: np.ndarray
    downbeat_times: np.ndarray
    bpm: float
    meter: int


def gen_click_track(bpm: float, meter: int, duration_s: float, seed: int = 0,
                    noise: float = 0.0, jitter_s: float = 0.0) -> SyntheticClip:
    """Click track at `bpm` with a downbeat every `meter` beats, starting on
    beat 0. Jitter shifts each click by up to +-jitter_s (annotations follow
    the audible click)."""
    if duration_s < 5.0:
        raise ValueError("clips shorter than 5 s are not useful for decoding")
    if not 55.0 <= bpm <= 215.0:
        raise ValueError(f"bpm {bpm} outside the decoder range [55, 215]")
    if meter not in (3, 4):
        raise ValueError(f"meter {meter} not in (3, 4)")
    rng = np.random.default_rng(np.random.Philox(key=seed))
    period = 60.0 / bpm
    n_beats = int(np.ceil(duration_s / period))
    grid = np.arange(n_beats) * period
    grid = grid[grid < duration_s]
    if jitter_s > 0.0:
        grid = grid + rng.uniform(-jitter_s, jitter_s, len(grid))
        grid[0] = max(grid[0], 0.0)
    n_samples = int(round(duration_s * SAMPLE_RATE))
    audio = np.zeros(n_samples, dtype=np.float64)
    if noise > 0.0:
        audio += rng.normal(0.0, noise, n_samples)
    click_n = int(CLICK_LEN_S * SAMPLE_RATE)
    t_click = np.arange(click_n) / SAMPLE_RATE
    envelope = np.exp(-t_click / CLICK_DECAY_S)
    beat_click = CLICK_GAIN * envelope * np.sin(2 * np.pi * CLICK_FREQ * t_click)
    down_click = DOWNBEAT_GAIN * envelope * np.sin(2 * np.pi * DOWNBEAT_FREQ * t_click)
    downbeats = []
    for k, t in enumerate(grid):
        start = int(round(t * SAMPLE_RATE))
        click = down_click if k % meter == 0 else beat_click
        if k % meter == 0:
            downbeats.append(t)
        stop = min(start + click_n, n_samples)
        audio[start:stop] += click[:stop - start]
    clip = AudioClip(samples=np.clip(audio, -1.0, 1.0).astype(np.float32))
    return SyntheticClip(audio=clip, beat_times=grid, downbeat_times=np.array(downbeats),
                         bpm=bpm, meter=meter)


@dataclass(frozen=True)
class FrameTargets:
    beat: np.ndarray  # [T] in [0, 1]
    down: np.ndarray  # [T]
    tempo: np.ndarray  # [n_tempo_bins] one-hot


def frame_targets(clip: SyntheticClip, n_frames: int, n_tempo_bins: int = 300,
                  widen: bool = True) -> FrameTargets:
    """Per-frame binary targets at the feature frame rate, optionally widened
    by one frame at weight 0.5 on each side."""
    beat = _times_to_target(clip.beat_times, n_frames, widen)
    down = _times_to_target(clip.downbeat_times, n_frames, widen)
    tempo = np.zeros(n_tempo_bins, dtype=np.float32)
    tempo[int(np.clip(round(clip.bpm), 0, n_tempo_bins - 1))] = 1.0
    return FrameTargets(beat=beat, down=down, tempo=tempo)


def _times_to_target(times: np.ndarray, n_frames: int, widen: bool) -> np.ndarray:
    target = np.zeros(n_frames, dtype=np.float32)
    frames = np.round(np.asarray(times) * FPS).astype(int)
    frames = frames[(frames >= 0) & (frames < n_frames)]
    if widen:
        for off in (-1, 1):
            neigh = frames + off
            neigh = neigh[(neigh >= 0) & (neigh < n_frames)]
            target[neigh] = 0.5
    target[frames] = 1.0
    return target


def make_dataset(n_clips: int, seed: int = 0, duration_s: float = 8.0,
                 bpm_range=(60.0, 180.0), meters=(3, 4), noise: float = 0.01,
                 jitter_s: float = 0.005) -> list[SyntheticClip]:
    """Deterministic corpus of varied click tracks."""
    rng = np.random.default_rng(np.random.Philox(key=seed ^ 0x5EED))
    clips = []
    for i in range(n_clips):
        bpm = float(rng.uniform(*bpm_range))
        meter = int(rng.choice(meters))
        clips.append(gen_click_track(bpm, meter, duration_s, seed=seed * 100003 + i,
                                     noise=noise, jitter_s=jitter_s))
    return clips
