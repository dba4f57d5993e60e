"""Live tracking session: PCM samples in, timed numbered beats out.

The session never looks at audio beyond what has been pushed: samples become
spectral frames at each hop boundary, frames flow through the streaming conv
front-end and the block-streaming encoder, and each emitted center frame is
decoded immediately. Feeding a file through push() in chunks therefore
behaves exactly like a live stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import FPS, AudioClip, FeatureStream, FilterBank, build_filterbank
from .dbn import MAX_BPM, MIN_BPM, OBSERVATION_LAMBDA, TRANSITION_LAMBDA, DecodedBeat, OnlineDecoder
from .encoder import BlockConfig, StreamingEncoder
from .frontend import FrontendStream
from .model import ModelParams
from .tensor import Tensor


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class DbnSettings:
    min_bpm: float = MIN_BPM
    max_bpm: float = MAX_BPM
    observation_lambda: int = OBSERVATION_LAMBDA
    transition_lambda: float = TRANSITION_LAMBDA


class BeatTracker:
    """Streaming pipeline over a loaded model."""

    def __init__(self, params: ModelParams, block_cfg: BlockConfig,
                 dbn: DbnSettings | None = None, fb: FilterBank | None = None):
        dbn = dbn or DbnSettings()
        self.params = params
        self.block_cfg = block_cfg
        self.features = FeatureStream(fb if fb is not None else build_filterbank())
        self.frontend = FrontendStream(params.frontend, params.cfg.frontend)
        self.encoder = StreamingEncoder(params.encoder, params.cfg.encoder, block_cfg)
        self.decoder = OnlineDecoder(min_bpm=dbn.min_bpm, max_bpm=dbn.max_bpm, fps=FPS,
                                     observation_lambda=dbn.observation_lambda,
                                     transition_lambda=dbn.transition_lambda)
        self.beat_acts: list[float] = []
        self.down_acts: list[float] = []

    def push(self, samples) -> list[DecodedBeat]:
        """Feed new PCM samples; returns beats that became decodable."""
        frames = self.features.push(samples)
        if not frames:
            return []
        enc_in = self.frontend.push(np.stack([f.values for f in frames]))
        return self._decode(self.encoder.stream_step(Tensor(enc_in)))

    def finish(self) -> list[DecodedBeat]:
        """Flush the final partial blocks (look-ahead truncated at stream end)."""
        return self._decode(self.encoder.finish())

    def _decode(self, center_chunks) -> list[DecodedBeat]:
        new_beats = []
        for chunk in center_chunks:
            rows = chunk.data
            beat_p = _sigmoid(rows @ self.params.beat_w.data + self.params.beat_b.data)[:, 0]
            down_p = _sigmoid(rows @ self.params.down_w.data + self.params.down_b.data)[:, 0]
            for b, d in zip(beat_p, down_p):
                self.beat_acts.append(float(b))
                self.down_acts.append(float(d))
                beat = self.decoder.step(float(b), float(d))
                if beat is not None:
                    new_beats.append(beat)
        return new_beats


@dataclass
class TrackResult:
    beats: list
    beat_acts: np.ndarray
    down_acts: np.ndarray


def track_clip(params: ModelParams, clip: AudioClip, block_cfg: BlockConfig,
               dbn: DbnSettings | None = None, fb: FilterBank | None = None,
               chunk_samples: int = 4410) -> TrackResult:
    """Run a whole clip through the live pipeline in fixed-size chunks."""
    tracker = BeatTracker(params, block_cfg, dbn, fb)
    beats = []
    for lo in range(0, len(clip.samples), chunk_samples):
        beats += tracker.push(clip.samples[lo:lo + chunk_samples])
    beats += tracker.finish()
    return TrackResult(beats=beats, beat_acts=np.array(tracker.beat_acts),
                       down_acts=np.array(tracker.down_acts))
