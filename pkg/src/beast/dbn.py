"""Online beat decoding: a tempo/phase state lattice whose filtered posterior
is updated by the forward algorithm, one frame at a time, plus downbeat
numbering by online meter/phase voting.

Each tempo row models one integer beat interval tau (frames); its tau phase
states advance deterministically and the tempo may change only at the phase
wrap, with probability proportional to exp(-lambda * |ln(tau'/tau)|). The
first ceil(tau/observation_lambda) phases of each row count as beat states.
Decoding is strictly causal; Viterbi is not available online, so beats are
emitted when the filtered argmax state is beat-flagged (debounced by half
the minimum beat interval).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio import FPS

MIN_BPM = 55.0
MAX_BPM = 215.0
OBSERVATION_LAMBDA = 16
TRANSITION_LAMBDA = 100.0


class StateSpaceConfigError(ValueError):
    """No integer beat interval fits the requested tempo range."""


class BeatStateSpace:
    def __init__(self, min_bpm: float = MIN_BPM, max_bpm: float = MAX_BPM,
                 fps: float = FPS, observation_lambda: int = OBSERVATION_LAMBDA):
        if not 0 < min_bpm < max_bpm:
            raise StateSpaceConfigError(f"invalid tempo range [{min_bpm}, {max_bpm}]")
        if fps <= 0 or observation_lambda < 1:
            raise StateSpaceConfigError("fps must be positive and observation_lambda >= 1")
        min_tau = math.ceil(fps * 60.0 / max_bpm)
        max_tau = math.floor(fps * 60.0 / min_bpm)
        if min_tau > max_tau:
            raise StateSpaceConfigError(
                f"empty interval range [{min_tau}, {max_tau}] for [{min_bpm}, {max_bpm}] bpm at {fps} fps")
        self.min_bpm = min_bpm
        self.max_bpm = max_bpm
        self.fps = fps
        self.observation_lambda = observation_lambda
        self.intervals = np.arange(min_tau, max_tau + 1)  # tau per row
        self.n_rows = len(self.intervals)
        self.n_states = int(self.intervals.sum())
        self.row_start = np.concatenate([[0], np.cumsum(self.intervals)[:-1]])
        self.row_last = self.row_start + self.intervals - 1
        self.state_interval = np.repeat(self.intervals, self.intervals)
        self.state_phase = np.concatenate([np.arange(t) for t in self.intervals])
        beat_span = np.ceil(self.intervals / observation_lambda).astype(int)
        self.beat_mask = self.state_phase < np.repeat(beat_span, self.intervals)

    @property
    def min_interval(self) -> int:
        return int(self.intervals[0])


class TransitionModel:
    """Deterministic phase advance; tempo redistribution at the wrap."""

    def __init__(self, ss: BeatStateSpace, transition_lambda: float = TRANSITION_LAMBDA):
        self.ss = ss
        self.transition_lambda = transition_lambda
        taus = ss.intervals.astype(np.float64)
        log_ratio = np.abs(np.log(taus[None, :] / taus[:, None]))
        w = np.exp(-transition_lambda * log_ratio)
        self.wrap_matrix = w / w.sum(axis=1, keepdims=True)  # [from_row, to_row]


def observation_likelihoods(act: float, ss: BeatStateSpace, observation_lambda: int | None = None) -> np.ndarray:
    """Beat-flagged states observe `act`, the rest share the complement:
    (1 - act) / (observation_lambda - 1)."""
    lam = ss.observation_lambda if observation_lambda is None else observation_lambda
    if not 0.0 <= act <= 1.0:
        raise ValueError(f"activation {act} outside [0, 1]")
    rest = (1.0 - act) / (lam - 1.0) if lam > 1 else 0.0
    return np.where(ss.beat_mask, act, rest)


@dataclass
class ForwardState:
    probs: np.ndarray  # filtered posterior, sums to 1
    frame: int = 0
    last_beat_frame: int | None = None

    @classmethod
    def initial(cls, ss: BeatStateSpace) -> "ForwardState":
        return cls(probs=np.full(ss.n_states, 1.0 / ss.n_states, dtype=np.float64))


def forward_step(state: ForwardState, act: float, tm: TransitionModel, ss: BeatStateSpace) -> bool:
    """Advance the filtered posterior by one frame; True when a beat is
    emitted at this frame. Purely causal; the posterior stays normalized."""
    p = state.probs
    wrap_mass = p[ss.row_last]
    p_new = np.empty_like(p)
    p_new[1:] = p[:-1]
    p_new[ss.row_start] = tm.wrap_matrix.T @ wrap_mass
    p_new *= np.maximum(observation_likelihoods(act, ss), 1e-12)
    p_new /= p_new.sum()
    state.probs = p_new
    frame = state.frame
    state.frame += 1
    if ss.beat_mask[int(np.argmax(p_new))]:
        if state.last_beat_frame is None or frame - state.last_beat_frame > ss.min_interval / 2.0:
            state.last_beat_frame = frame
            return True
    return False


# ---------------------------------------------------------------------------
# downbeat numbering


class DownbeatVoter:
    """Online meter/phase vote: running mean of the downbeat activation per
    (meter, phase) class of emitted beats; the argmax class sets the count.
    Ties break to the lowest meter, then the lowest phase; past labels are
    never rewritten."""

    def __init__(self, meters=(3, 4)):
        self.meters = tuple(sorted(meters))
        self.sums = {m: np.zeros(m) for m in self.meters}
        self.counts = {m: np.zeros(m, dtype=int) for m in self.meters}
        self.n_beats = 0

    def observe(self, downbeat_act: float) -> int:
        """Record the next beat's downbeat activation, return its number
        (1 = downbeat)."""
        k = self.n_beats
        for m in self.meters:
            self.sums[m][k % m] += downbeat_act
            self.counts[m][k % m] += 1
        best = None
        best_mean = -np.inf
        for m in self.meters:
            for phase in range(m):
                if self.counts[m][phase] == 0:
                    continue
                mean = self.sums[m][phase] / self.counts[m][phase]
                if mean > best_mean:
                    best_mean = mean
                    best = (m, phase)
        meter, phase = best
        self.n_beats += 1
        return (k - phase) % meter + 1


def downbeat_select(beat_frames, downbeat_act: np.ndarray, meters=(3, 4)) -> list[int]:
    """Label already-emitted beats (by frame index) with beat numbers."""
    voter = DownbeatVoter(meters)
    labels = []
    for f in beat_frames:
        f = min(int(f), len(downbeat_act) - 1)
        labels.append(voter.observe(float(downbeat_act[f])))
    return labels


# ---------------------------------------------------------------------------
# full online decoder


@dataclass
class DecodedBeat:
    frame: int
    time_s: float
    number: int  # 1 = downbeat


class OnlineDecoder:
    """Frame-synchronous beat decoder: feed (beat_act, downbeat_act) pairs,
    collect beats as they are emitted."""

    def __init__(self, min_bpm: float = MIN_BPM, max_bpm: float = MAX_BPM, fps: float = FPS,
                 observation_lambda: int = OBSERVATION_LAMBDA,
                 transition_lambda: float = TRANSITION_LAMBDA, meters=(3, 4)):
        self.ss = BeatStateSpace(min_bpm, max_bpm, fps, observation_lambda)
        self.tm = TransitionModel(self.ss, transition_lambda)
        self.state = ForwardState.initial(self.ss)
        self.voter = DownbeatVoter(meters)
        self.beats: list[DecodedBeat] = []

    def step(self, beat_act: float, downbeat_act: float) -> DecodedBeat | None:
        frame = self.state.frame
        if forward_step(self.state, float(beat_act), self.tm, self.ss):
            beat = DecodedBeat(frame=frame, time_s=frame / self.ss.fps,
                               number=self.voter.observe(float(downbeat_act)))
            self.beats.append(beat)
            return beat
        return None

    def run(self, beat_acts, downbeat_acts) -> list[DecodedBeat]:
        for b, d in zip(beat_acts, downbeat_acts):
            self.step(b, d)
        return self.beats
