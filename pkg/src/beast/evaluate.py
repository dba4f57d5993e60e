"""Evaluation: tolerance-window F-measure, latency arithmetic, real-time
factor measurement, and the beat text format."""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .audio import HOP, SAMPLE_RATE
from .encoder import BlockConfig

TOLERANCE_S = 0.070


class BeatFileParseError(ValueError):
    def __init__(self, path, line_no, detail):
        super().__init__(f"{path}:{line_no}: {detail}")
        self.line_no = line_no


@dataclass(frozen=True)
class EvalResult:
    f1: float
    precision: float
    recall: float
    matched: int
    n_ref: int
    n_est: int

    def as_dict(self) -> dict:
        return {"f1": self.f1, "precision": self.precision, "recall": self.recall,
                "matched": self.matched, "n_ref": self.n_ref, "n_est": self.n_est}


def f_measure(ref_times, est_times, tolerance_s: float = TOLERANCE_S) -> EvalResult:
    """Greedy one-to-one matching in time order: each estimate takes the
    earliest unmatched reference within the tolerance window."""
    ref = np.asarray(sorted(ref_times), dtype=np.float64)
    est = np.asarray(sorted(est_times), dtype=np.float64)
    matched = 0
    i = 0
    for e in est:
        while i < len(ref) and ref[i] < e - tolerance_s:
            i += 1
        if i < len(ref) and abs(ref[i] - e) <= tolerance_s:
            matched += 1
            i += 1
    precision = matched / len(est) if len(est) else 0.0
    recall = matched / len(ref) if len(ref) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalResult(f1=f1, precision=precision, recall=recall,
                      matched=matched, n_ref=len(ref), n_est=len(est))


def latency_ms(cfg: BlockConfig) -> int:
    """Algorithmic latency: center block plus look-ahead, in whole ms."""
    return round((cfg.n_center + cfg.n_right) * HOP / SAMPLE_RATE * 1000.0)


def measure_rtf(run_pipeline, audio_duration_s: float, runs: int = 5) -> dict:
    """Wall-clock time of `run_pipeline()` over the clip divided by its
    duration; reports the first measurement and the median of `runs`."""
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        run_pipeline()
        times.append((time.perf_counter() - t0) / audio_duration_s)
    return {"rtf_single": times[0], "rtf_median": float(np.median(times)), "runs": runs}


# ---------------------------------------------------------------------------
# beat text format: "<time_seconds>\t<beat_number>", number 1 = downbeat


def write_beats(path, beats) -> None:
    """`beats` holds (time_s, number) pairs or objects with those fields."""
    with open(path, "w") as fh:
        for b in beats:
            t, n = (b.time_s, b.number) if hasattr(b, "time_s") else (b[0], b[1])
            if n is None:
                fh.write(f"{t:.5f}\n")
            else:
                fh.write(f"{t:.5f}\t{int(n)}\n")


def parse_beats(path):
    """Returns (times, numbers); numbers entries are None on beat-only lines.
    Accepts tab or space separation."""
    times: list[float] = []
    numbers: list[int | None] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                times.append(float(parts[0]))
            except ValueError as e:
                raise BeatFileParseError(path, line_no, f"bad time {parts[0]!r}") from e
            if len(parts) > 1:
                try:
                    numbers.append(int(float(parts[1])))
                except ValueError as e:
                    raise BeatFileParseError(path, line_no, f"bad beat number {parts[1]!r}") from e
            else:
                numbers.append(None)
    return np.array(times), numbers


def compare_beat_files(est_path, ref_path, tolerance_s: float = TOLERANCE_S) -> dict:
    est_times, est_numbers = parse_beats(est_path)
    ref_times, ref_numbers = parse_beats(ref_path)
    out = {"beats": f_measure(ref_times, est_times, tolerance_s).as_dict()}
    if any(n is not None for n in est_numbers) and any(n is not None for n in ref_numbers):
        est_down = [t for t, n in zip(est_times, est_numbers) if n == 1]
        ref_down = [t for t, n in zip(ref_times, ref_numbers) if n == 1]
        out["downbeats"] = f_measure(ref_down, est_down, tolerance_s).as_dict()
    return out


# ---------------------------------------------------------------------------
# parallel helpers


def worker_count() -> int:
    """Worker threads for clip-parallel evaluation, capped by BEAST_THREADS."""
    cap = os.environ.get("BEAST_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def parallel_map(fn, items):
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
