"""Causal audio feature extraction.

PCM in, one 128-band log-magnitude spectral frame per 1024-sample hop out,
at a fixed 44.1 kHz rate. The analysis window is left-aligned (ends at the
hop boundary), so a frame never reads samples after its own boundary and the
front-end adds no look-ahead latency.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE = 44100
HOP = 1024
WINDOW = 4096
N_BINS = WINDOW // 2 + 1
N_BANDS = 128
FMIN = 30.0
FMAX = 11000.0
FPS = SAMPLE_RATE / HOP  # ~43.07 frames/s, 23.22 ms per hop


class AudioFormatError(ValueError):
    """Unsupported container or PCM encoding."""


class EmptyInputError(ValueError):
    """No samples to ingest."""


@dataclass(frozen=True)
class AudioClip:
    """Mono 44.1 kHz float samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.samples.ndim != 1:
            raise AudioFormatError("AudioClip expects mono samples")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    @property
    def n_frames(self) -> int:
        return len(self.samples) // HOP


@dataclass(frozen=True)
class FeatureFrame:
    values: np.ndarray  # [N_BANDS], non-negative log magnitudes
    frame_index: int

    @property
    def time_s(self) -> float:
        return self.frame_index * HOP / SAMPLE_RATE


# ---------------------------------------------------------------------------
# ingest


def ingest(raw, rate: int, channels: int = 1) -> AudioClip:
    """Normalize raw audio to the mono 44.1 kHz clip the pipeline expects.

    `raw` is a float sample sequence (1-D, or [n, channels]) or little-endian
    16-bit PCM bytes. Stereo is downmixed by per-sample mean; other rates are
    resampled with a windowed-sinc kernel.
    """
    if rate <= 0:
        raise AudioFormatError(f"invalid sample rate {rate}")
    if channels not in (1, 2):
        raise AudioFormatError(f"unsupported channel count {channels}")
    if isinstance(raw, (bytes, bytearray)):
        if len(raw) % (2 * channels) != 0:
            raise AudioFormatError("PCM byte length is not a whole number of 16-bit frames")
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
        if channels == 2:
            data = data.reshape(-1, 2)
    else:
        data = np.asarray(raw, dtype=np.float64)
    if data.size == 0:
        raise EmptyInputError("no samples")
    if data.ndim == 2:
        if data.shape[1] != channels:
            raise AudioFormatError(f"got {data.shape[1]} channels, expected {channels}")
        data = data.mean(axis=1)
    elif data.ndim != 1:
        raise AudioFormatError(f"unsupported sample array shape {data.shape}")
    elif channels == 2:
        data = data.reshape(-1, 2).mean(axis=1)
    if not np.all(np.isfinite(data)):
        raise AudioFormatError("non-finite samples")
    if rate != SAMPLE_RATE:
        data = resample_sinc(data, rate, SAMPLE_RATE)
    return AudioClip(samples=data.astype(np.float32), sample_rate=SAMPLE_RATE)


def resample_sinc(x: np.ndarray, rate_in: int, rate_out: int, taps: int = 32, beta: float = 8.6) -> np.ndarray:
    """Windowed-sinc (Kaiser) resampling of a mono signal."""
    if rate_in == rate_out:
        return x.copy()
    n_out = int(len(x) * rate_out // rate_in)
    ratio = rate_in / rate_out
    cutoff = min(1.0, rate_out / rate_in)
    half = taps // 2
    offsets = np.arange(-half + 1, half + 1)  # taps positions around floor(pos)
    i0_beta = np.i0(beta)
    out = np.empty(n_out, dtype=np.float64)
    chunk = 65536
    for lo in range(0, n_out, chunk):
        hi = min(lo + chunk, n_out)
        pos = np.arange(lo, hi, dtype=np.float64) * ratio
        base = np.floor(pos).astype(np.int64)
        t = pos[:, None] - (base[:, None] + offsets[None, :])  # in (-half, half]
        arg = 1.0 - (t / half) ** 2
        win = np.where(arg > 0, np.i0(beta * np.sqrt(np.maximum(arg, 0.0))) / i0_beta, 0.0)
        kern = cutoff * np.sinc(cutoff * t) * win
        idx = base[:, None] + offsets[None, :]
        valid = (idx >= 0) & (idx < len(x))
        out[lo:hi] = np.where(valid, x[np.clip(idx, 0, len(x) - 1)], 0.0).__mul__(kern).sum(axis=1)
    return out


# ---------------------------------------------------------------------------
# WAV reading (RIFF, PCM 16/24/32-bit int and 32-bit float)

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def load_wav(path) -> AudioClip:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise AudioFormatError(f"{path}: not a RIFF WAV file")
    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        cid, size = struct.unpack_from("<4sI", blob, pos)
        body = blob[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise AudioFormatError(f"{path}: missing fmt or data chunk")
    if len(fmt) < 16:
        raise AudioFormatError(f"{path}: malformed fmt chunk")
    tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag == _WAVE_FORMAT_EXTENSIBLE and len(fmt) >= 26:
        tag = struct.unpack_from("<H", fmt, 24)[0]
    frame_bytes = channels * (bits // 8)
    if frame_bytes:
        data = data[: len(data) - len(data) % frame_bytes]
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _WAVE_FORMAT_PCM and bits == 24:
        raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3)
        ints = raw[:, 0].astype(np.int32) | (raw[:, 1].astype(np.int32) << 8) | (raw[:, 2].astype(np.int32) << 16)
        ints -= (ints & 0x800000) << 1  # sign extension
        samples = ints.astype(np.float64) / 8388608.0
    elif tag == _WAVE_FORMAT_PCM and bits == 32:
        samples = np.frombuffer(data, dtype="<i4").astype(np.float64) / 2147483648.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise AudioFormatError(f"{path}: unsupported encoding (tag={tag}, bits={bits})")
    if channels not in (1, 2):
        raise AudioFormatError(f"{path}: {channels} channels not supported")
    if channels == 2:
        samples = samples.reshape(-1, 2)
    return ingest(samples, rate, channels)


def write_wav(path, clip: AudioClip) -> None:
    """16-bit mono WAV writer (for the synthetic-clip tooling)."""
    pcm = np.clip(clip.samples, -1.0, 1.0)
    ints = np.round(pcm * 32767.0).astype("<i2").tobytes()
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", 36 + len(ints)) + b"WAVE")
        fh.write(b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16))
        fh.write(b"data" + struct.pack("<I", len(ints)) + ints)


# ---------------------------------------------------------------------------
# filterbank


@dataclass(frozen=True)
class FilterBank:
    """128 triangular log-spaced bands over the rFFT bins of a 4096 window."""

    band_edges: np.ndarray  # [N_BANDS + 2] Hz
    weights: np.ndarray  # dense [N_BANDS, N_BINS], each row sums to 1
    band_slices: tuple = field(repr=False, default=())  # (start, row_weights) per band

    @property
    def n_bands(self) -> int:
        return self.weights.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return self.band_edges[1:-1]

    def apply(self, spectrum: np.ndarray) -> np.ndarray:
        """Band energies via the per-band sparse rows."""
        out = np.empty(self.n_bands, dtype=spectrum.dtype)
        for k, (start, w) in enumerate(self.band_slices):
            out[k] = w @ spectrum[start:start + len(w)]
        return out


def build_filterbank(n_bands: int = N_BANDS, fmin: float = FMIN, fmax: float = FMAX) -> FilterBank:
    edges = np.geomspace(fmin, fmax, n_bands + 2)
    bin_freqs = np.arange(N_BINS) * (SAMPLE_RATE / WINDOW)
    weights = np.zeros((n_bands, N_BINS), dtype=np.float64)
    for k in range(n_bands):
        lo, mid, hi = edges[k], edges[k + 1], edges[k + 2]
        rising = (bin_freqs - lo) / (mid - lo)
        falling = (hi - bin_freqs) / (hi - mid)
        tri = np.minimum(rising, falling)
        tri[(bin_freqs <= lo) | (bin_freqs >= hi)] = 0.0
        tri = np.maximum(tri, 0.0)
        if tri.sum() <= 0.0:
            # band narrower than one bin: collapse onto the closest bin
            tri[np.argmin(np.abs(bin_freqs - mid))] = 1.0
        weights[k] = tri / tri.sum()
    w32 = weights.astype(np.float32)
    slices = []
    for k in range(n_bands):
        nz = np.nonzero(w32[k])[0]
        slices.append((int(nz[0]), np.ascontiguousarray(w32[k, nz[0]:nz[-1] + 1])))
    return FilterBank(band_edges=edges, weights=w32, band_slices=tuple(slices))


# ---------------------------------------------------------------------------
# STFT frames

_HANN = (0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WINDOW) / WINDOW)).astype(np.float64)


def hann_window() -> np.ndarray:
    return _HANN.copy()


def stft_frame(clip: AudioClip, frame_index: int) -> np.ndarray:
    """Magnitude spectrum of the causal window ending at hop boundary
    frame_index * HOP (inclusive); out-of-range samples are zero."""
    if frame_index < 0:
        raise IndexError(f"frame_index {frame_index} < 0")
    end = frame_index * HOP + 1
    window = _gather_window(clip.samples, end)
    return _window_magnitude(window)


def _gather_window(samples: np.ndarray, end: int) -> np.ndarray:
    start = end - WINDOW
    window = np.zeros(WINDOW, dtype=np.float64)
    lo = max(start, 0)
    hi = min(end, len(samples))
    if hi > lo:
        window[lo - start:hi - start] = samples[lo:hi]
    return window


def _window_magnitude(window: np.ndarray) -> np.ndarray:
    return np.abs(np.fft.rfft(window * _HANN))


def frame_features(spectrum: np.ndarray, fb: FilterBank) -> np.ndarray:
    """ln(1 + band energy) per band."""
    if len(spectrum) != fb.weights.shape[1]:
        raise ValueError(f"spectrum length {len(spectrum)} != {fb.weights.shape[1]} bins")
    return np.log1p(fb.apply(spectrum)).astype(np.float32)


def stream_features(clip: AudioClip, fb: FilterBank | None = None):
    """Yield FeatureFrames in order; frame t depends only on samples <= t*HOP."""
    if fb is None:
        fb = build_filterbank()
    for t in range(clip.n_frames):
        spectrum = stft_frame(clip, t)
        yield FeatureFrame(values=frame_features(spectrum, fb), frame_index=t)


def extract_features(clip: AudioClip, fb: FilterBank | None = None) -> np.ndarray:
    """Whole-clip feature matrix [n_frames, N_BANDS]."""
    frames = [f.values for f in stream_features(clip, fb)]
    if not frames:
        return np.zeros((0, N_BANDS), dtype=np.float32)
    return np.stack(frames)


class FeatureStream:
    """Incremental feature extraction for live input.

    push() accepts arbitrarily sized sample chunks and returns the newly
    completed FeatureFrames; results are bit-identical to the offline path.
    """

    def __init__(self, fb: FilterBank | None = None):
        self.fb = fb if fb is not None else build_filterbank()
        self._pending = np.zeros(0, dtype=np.float64)
        self._start = 0  # absolute index of _pending[0]
        self._next_frame = 0

    def push(self, samples) -> list[FeatureFrame]:
        chunk = np.asarray(samples, dtype=np.float64).reshape(-1)
        self._pending = np.concatenate([self._pending, chunk])
        out = []
        while self._start + len(self._pending) >= (self._next_frame + 1) * HOP:
            t = self._next_frame
            end = t * HOP + 1
            lo = max(end - WINDOW, 0)
            window = np.zeros(WINDOW, dtype=np.float64)
            seg = self._pending[lo - self._start:end - self._start]
            window[WINDOW - (end - lo):] = seg
            values = frame_features(_window_magnitude(window), self.fb)
            out.append(FeatureFrame(values=values, frame_index=t))
            self._next_frame += 1
            keep_from = max(self._next_frame * HOP + 1 - WINDOW, 0)
            if keep_from > self._start:
                self._pending = self._pending[keep_from - self._start:]
                self._start = keep_from
        return out
