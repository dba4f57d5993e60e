import numpy as np
import pytest

from beast.audio import FPS
from beast.dbn import (
    BeatStateSpace,
    DownbeatVoter,
    ForwardState,
    OnlineDecoder,
    StateSpaceConfigError,
    TransitionModel,
    downbeat_select,
    forward_step,
    observation_likelihoods,
)


def dense_transition_ref(ss: BeatStateSpace, transition_lambda: float) -> np.ndarray:
    """Row-stochastic transition matrix built state by state from the
    definition: deterministic phase advance, tempo redistribution at wrap."""
    n = ss.n_states
    t = np.zeros((n, n))
    for s in range(n):
        tau = ss.state_interval[s]
        phase = ss.state_phase[s]
        row = np.searchsorted(ss.intervals, tau)
        if phase < tau - 1:
            t[s, s + 1] = 1.0
        else:
            weights = np.exp(-transition_lambda * np.abs(np.log(ss.intervals / tau)))
            weights = weights / weights.sum()
            for r2, w in enumerate(weights):
                t[s, ss.row_start[r2]] = w
    return t


# ---------------------------------------------------------------------------
# state space


def test_default_state_space_dimensions():
    ss = BeatStateSpace(55, 215, FPS, 16)
    assert ss.intervals[0] == 13
    assert ss.intervals[-1] == 46
    assert ss.n_rows == 34
    assert ss.n_states == 1003


def test_single_row_range():
    ss = BeatStateSpace(99, 101, FPS, 16)
    assert ss.n_rows == 1
    assert ss.n_states == ss.intervals[0]


def test_empty_range_is_config_error():
    with pytest.raises(StateSpaceConfigError):
        BeatStateSpace(100, 100.5, FPS, 16)
    with pytest.raises(StateSpaceConfigError):
        BeatStateSpace(215, 55, FPS, 16)


def test_beat_flag_span():
    ss = BeatStateSpace(60, 100, FPS, 16)
    assert 32 in ss.intervals
    row = np.searchsorted(ss.intervals, 32)
    start = ss.row_start[row]
    flags = ss.beat_mask[start:start + 32]
    assert flags.sum() == 2  # ceil(32/16)
    assert flags[0] and flags[1] and not flags[2]


def test_each_state_has_one_tau_phase():
    ss = BeatStateSpace(80, 160, FPS, 16)
    assert len(ss.state_interval) == ss.n_states
    assert np.all(ss.state_phase < ss.state_interval)


# ---------------------------------------------------------------------------
# observation model


def test_observation_extremes():
    ss = BeatStateSpace(55, 215, FPS, 16)
    assert np.all(observation_likelihoods(1.0, ss)[~ss.beat_mask] == 0.0)
    assert np.all(observation_likelihoods(0.0, ss)[ss.beat_mask] == 0.0)


def test_observation_complement_split():
    ss = BeatStateSpace(55, 215, FPS, 16)
    lik = observation_likelihoods(0.7, ss)
    np.testing.assert_allclose(lik[~ss.beat_mask], 0.02)
    np.testing.assert_allclose(lik[ss.beat_mask], 0.7)


# ---------------------------------------------------------------------------
# transition model


def test_transition_rows_stochastic():
    ss = BeatStateSpace(55, 215, FPS, 16)
    tm = TransitionModel(ss, 100.0)
    np.testing.assert_allclose(tm.wrap_matrix.sum(axis=1), np.ones(ss.n_rows), atol=1e-9)
    dense = dense_transition_ref(ss, 100.0)
    np.testing.assert_allclose(dense.sum(axis=1), np.ones(ss.n_states), atol=1e-9)


def test_forward_step_matches_two_state_hand_case():
    # single row tau=2: states (phase 0 beat-flagged, phase 1 not)
    ss = BeatStateSpace(1200, 1330, FPS, 16)
    assert ss.n_states == 2
    tm = TransitionModel(ss, 100.0)
    state = ForwardState.initial(ss)
    act = 0.8
    forward_step(state, act, tm, ss)
    # hand arithmetic: T = [[0,1],[1,0]] row-stochastic; p = [.5,.5]
    # T^T p = [.5,.5]; obs = [0.8, 0.2/15]; normalize
    expect = np.array([0.5 * 0.8, 0.5 * 0.2 / 15.0])
    expect /= expect.sum()
    np.testing.assert_allclose(state.probs, expect, atol=1e-12)


def test_forward_matches_dense_recursion_small_space():
    ss = BeatStateSpace(290, 520, FPS, 8)
    assert ss.n_states <= 50
    tm = TransitionModel(ss, 40.0)
    dense = dense_transition_ref(ss, 40.0)
    rng = np.random.default_rng(0)
    state = ForwardState.initial(ss)
    p_ref = state.probs.copy()
    for _ in range(300):
        act = float(rng.uniform(0.0, 1.0))
        forward_step(state, act, tm, ss)
        lik = np.maximum(observation_likelihoods(act, ss), 1e-12)
        p_ref = dense.T @ p_ref * lik
        p_ref /= p_ref.sum()
        np.testing.assert_allclose(state.probs, p_ref, atol=1e-10)


def test_normalization_no_drift_10k_steps():
    ss = BeatStateSpace(55, 215, FPS, 16)
    tm = TransitionModel(ss)
    state = ForwardState.initial(ss)
    for _ in range(10000):
        forward_step(state, 0.5, tm, ss)
        assert abs(state.probs.sum() - 1.0) < 1e-9
        assert np.all(state.probs >= 0)


def test_forward_survives_hard_zero_and_one():
    ss = BeatStateSpace(55, 215, FPS, 16)
    tm = TransitionModel(ss)
    state = ForwardState.initial(ss)
    for act in (0.0, 1.0, 0.0, 0.0, 1.0):
        forward_step(state, act, tm, ss)
    assert abs(state.probs.sum() - 1.0) < 1e-9


@pytest.mark.parametrize("period", [36, 29, 20, 14])
def test_impulse_train_locks_to_period(period):
    ss = BeatStateSpace(55, 215, FPS, 16)
    tm = TransitionModel(ss)
    state = ForwardState.initial(ss)
    emitted = []
    for frame in range(period * 14):
        act = 0.95 if frame % period == 0 else 0.02
        if forward_step(state, act, tm, ss):
            emitted.append(frame)
    late = [b for b in emitted if b >= 2 * period]
    gaps = np.diff(late)
    assert len(gaps) >= 5
    assert np.all(np.abs(gaps - period) <= 1), f"gaps {gaps}"


def test_decoder_causality():
    ss_kw = dict(min_bpm=55, max_bpm=215)
    rng = np.random.default_rng(1)
    acts = rng.uniform(0, 1, 400)
    downs = rng.uniform(0, 1, 400)
    full = OnlineDecoder(**ss_kw).run(acts, downs)
    # changing future activations cannot change already-emitted beats
    acts2 = acts.copy()
    acts2[200:] = rng.uniform(0, 1, 200)
    half = OnlineDecoder(**ss_kw).run(acts2[:400], downs)
    full_prefix = [(b.frame, b.number) for b in full if b.frame < 200]
    half_prefix = [(b.frame, b.number) for b in half if b.frame < 200]
    assert full_prefix == half_prefix


# ---------------------------------------------------------------------------
# downbeat voting


def test_downbeat_meter4_lock():
    acts = np.zeros(200)
    beat_frames = np.arange(0, 200, 10)
    acts[beat_frames[::4]] = 1.0
    labels = downbeat_select(beat_frames, acts)
    # within 8 beats the (meter=4, phase=0) class dominates
    for i, lab in enumerate(labels[8:], start=8):
        assert lab == (i % 4) + 1


def test_downbeat_meter3_lock():
    acts = np.zeros(200)
    beat_frames = np.arange(0, 200, 10)
    acts[beat_frames[::3]] = 1.0
    labels = downbeat_select(beat_frames, acts)
    for i, lab in enumerate(labels[8:], start=8):
        assert lab == (i % 3) + 1


def test_downbeat_tie_break_stable():
    voter = DownbeatVoter()
    labels = [voter.observe(0.5) for _ in range(12)]
    # all-equal activations: lowest meter (3), lowest phase (0)
    assert labels == [(k % 3) + 1 for k in range(12)]


def test_downbeat_labels_not_rewritten():
    acts = np.zeros(300)
    beat_frames = np.arange(0, 300, 10)
    acts[beat_frames[2::4]] = 1.0  # downbeats on phase 2 (mod 4)
    voter = DownbeatVoter()
    labels = []
    for f in beat_frames:
        labels.append(voter.observe(float(acts[f])))
    relabeled = downbeat_select(beat_frames, acts)
    assert labels == relabeled  # pure function of the prefix
    late = labels[10:]
    assert all(lab == ((k + 10 - 2) % 4) + 1 for k, lab in enumerate(late))
