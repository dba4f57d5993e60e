"""Command-line interface.

Subcommands: track (stream a WAV through the pipeline and write beats),
train (desk-scale synthetic training), eval (compare beat files), bench
(latency and real-time factor). Exit codes: 0 ok, 2 I/O, 3 configuration,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .audio import AudioFormatError, EmptyInputError, load_wav
from .dbn import StateSpaceConfigError
from .encoder import BlockConfig, EncoderConfig, StreamContractError
from .evaluate import BeatFileParseError, compare_beat_files, latency_ms, measure_rtf, write_beats
from .frontend import ConvFrontendConfig
from .model import ModelConfig, init_params
from .pipeline import DbnSettings, track_clip
from .synth import gen_click_track, make_dataset
from .tensor import NumericsError, ShapeError
from .train import TrainingDivergedError, train
from .weights import WeightFileError, load_weights, save_weights

EXIT_OK = 0
EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4


def _int_list(text: str) -> list[int]:
    return [int(p) for p in text.split(",") if p != ""]


def _add_block_flags(p, default_nl=256, default_nc="16", default_nr="16"):
    p.add_argument("--nl", type=int, default=default_nl, help="left context frames")
    p.add_argument("--nc", type=_int_list, default=_int_list(default_nc),
                   help="center block frames (comma list allowed)")
    p.add_argument("--nr", type=_int_list, default=_int_list(default_nr),
                   help="look-ahead frames (comma list allowed)")


def _block_configs(args) -> list[BlockConfig]:
    if len(args.nc) != len(args.nr):
        raise ShapeError(f"--nc gave {len(args.nc)} values but --nr gave {len(args.nr)}")
    return [BlockConfig(args.nl, nc, nr) for nc, nr in zip(args.nc, args.nr)]


def _add_dbn_flags(p):
    p.add_argument("--min-bpm", type=float, default=55.0)
    p.add_argument("--max-bpm", type=float, default=215.0)
    p.add_argument("--observation-lambda", type=int, default=16)
    p.add_argument("--transition-lambda", type=float, default=100.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="beast", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", help="stream a WAV file and write detected beats")
    t.add_argument("audio")
    t.add_argument("--model", required=True)
    t.add_argument("--out", default=None, help="beat file (default: <audio>.beats)")
    _add_block_flags(t)
    _add_dbn_flags(t)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--emit-activations", default=None, metavar="CSV",
                   help="write frame_index,beat_p,downbeat_p")
    t.add_argument("--plot", nargs="?", const="", default=None, metavar="PNG",
                   help="render activations + beat grid (default: <out>.png)")

    tr = sub.add_parser("train", help="train a toy model on synthetic click tracks")
    tr.add_argument("--out", default="beast_toy.wt")
    tr.add_argument("--report", default=None, help="JSON metrics path (default: <out>.report.json)")
    tr.add_argument("--epochs", type=int, default=4)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--clips", type=int, default=200)
    tr.add_argument("--duration", type=float, default=8.0)
    tr.add_argument("--layers", type=int, default=2)
    tr.add_argument("--d-model", type=int, default=32)
    tr.add_argument("--heads", type=int, default=2)
    tr.add_argument("--d-ffn", type=int, default=128)
    tr.add_argument("--conv-channels", type=_int_list, default=[8, 16, 32])
    _add_block_flags(tr, default_nl=64, default_nc="16,1", default_nr="16,1")
    tr.add_argument("--plot", nargs="?", const="", default=None, metavar="PNG",
                    help="render the loss curves (default: <out>.loss.png)")

    ev = sub.add_parser("eval", help="compare an estimated beat file against a reference")
    ev.add_argument("estimate")
    ev.add_argument("reference")
    ev.add_argument("--tolerance", type=float, default=0.070)

    b = sub.add_parser("bench", help="latency and real-time factor per block setting")
    b.add_argument("--model", required=True)
    _add_block_flags(b, default_nc="1,16", default_nr="1,16")
    _add_dbn_flags(b)
    b.add_argument("--duration", type=float, default=30.0)
    b.add_argument("--runs", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--plot", nargs="?", const="", default=None, metavar="PNG")
    return ap


def cmd_track(args) -> int:
    params = load_weights(args.model)
    blocks = _block_configs(args)
    if len(blocks) != 1:
        raise ShapeError("track expects exactly one --nc/--nr setting")
    bc = blocks[0]
    dbn = DbnSettings(min_bpm=args.min_bpm, max_bpm=args.max_bpm,
                      observation_lambda=args.observation_lambda,
                      transition_lambda=args.transition_lambda)
    clip = load_wav(args.audio)
    out_path = args.out if args.out else args.audio + ".beats"
    print(f"model: {args.model} ({params.count():,} params)")
    print(f"blocks: nl={bc.n_left} nc={bc.n_center} nr={bc.n_right}")
    print(f"latency: {latency_ms(bc)} ms")
    result = track_clip(params, clip, bc, dbn)
    write_beats(out_path, result.beats)
    print(f"beats: {len(result.beats)} -> {out_path}")
    if args.emit_activations:
        with open(args.emit_activations, "w") as fh:
            fh.write("frame_index,beat_p,downbeat_p\n")
            for i, (bp, dp) in enumerate(zip(result.beat_acts, result.down_acts)):
                fh.write(f"{i},{bp:.6f},{dp:.6f}\n")
        print(f"activations -> {args.emit_activations}")
    if args.plot is not None:
        from .report import save_activation_plot

        plot_path = args.plot or out_path + ".png"
        save_activation_plot(plot_path, result.beat_acts, result.down_acts, result.beats)
        print(f"figure -> {plot_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = ModelConfig(
        encoder=EncoderConfig(n_layers=args.layers, n_heads=args.heads,
                              d_model=args.d_model, d_ffn=args.d_ffn),
        frontend=ConvFrontendConfig(channels=tuple(args.conv_channels)),
    )
    blocks = _block_configs(args)
    report_path = args.report if args.report else args.out + ".report.json"
    if args.epochs <= 0:
        params = init_params(cfg, seed=args.seed)
        history = {"train_loss": [], "val_loss": [], "lr": []}
    else:
        clips = make_dataset(args.clips, seed=args.seed, duration_s=args.duration)
        params, hist = train(clips, cfg, blocks, epochs=args.epochs, seed=args.seed,
                             log=lambda m: print(m, flush=True))
        history = hist.as_dict()
    save_weights(params, args.out)
    report = {"epochs": args.epochs, "seed": args.seed, "clips": args.clips,
              "blocks": [[b.n_left, b.n_center, b.n_right] for b in blocks],
              "parameters": params.count(), **history}
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2)
    print(f"weights -> {args.out}")
    print(f"report -> {report_path}")
    if args.plot is not None:
        from .report import save_loss_plot

        plot_path = args.plot or args.out + ".loss.png"
        save_loss_plot(plot_path, history)
        print(f"figure -> {plot_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    print(json.dumps(compare_beat_files(args.estimate, args.reference, args.tolerance), indent=2))
    return EXIT_OK


def cmd_bench(args) -> int:
    params = load_weights(args.model)
    dbn = DbnSettings(min_bpm=args.min_bpm, max_bpm=args.max_bpm,
                      observation_lambda=args.observation_lambda,
                      transition_lambda=args.transition_lambda)
    clip = gen_click_track(120.0, 4, args.duration, seed=args.seed, noise=0.01).audio
    rows = []
    for bc in _block_configs(args):
        rtf = measure_rtf(lambda: track_clip(params, clip, bc, dbn), clip.duration_s, runs=args.runs)
        row = {"n_center": bc.n_center, "n_right": bc.n_right, "n_left": bc.n_left,
               "latency_ms": latency_ms(bc), **rtf}
        rows.append(row)
        print(json.dumps(row))
    if args.plot is not None:
        from .report import save_bench_plot

        plot_path = args.plot or "bench.png"
        save_bench_plot(plot_path, rows)
        print(f"figure -> {plot_path}")
    return EXIT_OK


_COMMANDS = {"track": cmd_track, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (FileNotFoundError, IsADirectoryError, PermissionError,
            AudioFormatError, EmptyInputError, BeatFileParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (WeightFileError, ShapeError, StateSpaceConfigError, StreamContractError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDivergedError, NumericsError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
