"""``ieegspeech`` command line: gen-synthetic, extract-features, train, synth, eval.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
runtime failures; every failure prints a single ``error:`` line on stderr.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import PipelineConfig
from .errors import ConfigError

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(args, **overrides):
    cfg = PipelineConfig.load(getattr(args, "config", None))
    return cfg.override(seed=getattr(args, "seed", None), **overrides)


def cmd_gen_synthetic(args):
    from .pipeline import write_synthetic

    cfg = _config(args, synthetic__duration=args.duration, synthetic__channels=args.channels)
    syn, clipped = write_synthetic(args.out, cfg)
    print(f"wrote {args.out}: {syn.recording.channels.shape[0]} channels, "
          f"{len(syn.audio)} audio samples, {len(syn.truth['words'])} words, clipped={clipped}")


def cmd_extract_features(args):
    from .pipeline import extract_features, write_features

    cfg = _config(args)
    z, stats, ses = extract_features(args.session, cfg)
    write_features(args.out, z, stats, ses, cfg)
    n_const = int(stats.constant.sum())
    print(f"wrote {args.out}: {z.values.shape[0]} frames x {z.values.shape[1]} features"
          + (f", {n_const} constant columns zeroed" if n_const else ""))


def cmd_train(args):
    from .pipeline import train

    cfg = _config(args)
    m = train(args.features, args.audio, args.out, cfg, kfold=args.kfold)
    line = (f"wrote {args.out}: held-out pearson {m['heldout_pearson_mean']:.4f}, "
            f"epochs ae={m['ae_epochs']} transformer={m['tf_epochs']}")
    if "kfold_pearson_mean" in m:
        line += f", {len(m['kfold'])}-fold pearson {m['kfold_pearson_mean']:.4f}"
    print(line)
    for w in m["warnings"]:
        print(f"warning: {w}", file=sys.stderr)


def cmd_synth(args):
    from .pipeline import synth

    cfg = _config(args)
    w, log, clipped = synth(args.features, args.model, args.out, cfg, args.vocoder, args.iters)
    extra = f", {len(log)} iterations logged" if log is not None else ""
    print(f"wrote {args.out}: {len(w)} samples at {w.fs:g} Hz, clipped={clipped}{extra}")


def cmd_eval(args):
    from .pipeline import evaluate_files

    cfg = _config(args)
    rep = evaluate_files(args.ref, args.hyp, args.report, cfg)
    print(f"wrote {args.report}: pearson {rep.pearson_mean:.4f}, mcd {rep.mcd_db:.3f} dB, "
          f"hnr {rep.hnr_db:.2f} dB")
    for n in rep.notes:
        print(f"note: {n}", file=sys.stderr)


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {s}")
    return v


def build_parser():
    p = _Parser(prog="ieegspeech", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON config; flags override its keys")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-synthetic", cmd_gen_synthetic, "write a deterministic synthetic session")
    sp.add_argument("--out", required=True, help="session directory")
    sp.add_argument("--duration", type=float)
    sp.add_argument("--channels", type=int)

    sp = add("extract-features", cmd_extract_features, "aligned, z-scored feature matrix")
    sp.add_argument("--session", required=True)
    sp.add_argument("--out", required=True, help="features.f32 path; stats.json goes alongside")

    sp = add("train", cmd_train, "train the autoencoder and transformer")
    sp.add_argument("--features", required=True)
    sp.add_argument("--audio", required=True, help="aligned audio WAV (written by extract-features)")
    sp.add_argument("--out", required=True, help="model directory; loss.csv goes in its parent")
    sp.add_argument("--kfold", action="store_true", help="also report k-fold held-out metrics")

    sp = add("synth", cmd_synth, "predict a mel spectrogram and vocode it")
    sp.add_argument("--features", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", required=True, help="output WAV; ihpr_log.csv goes alongside")
    sp.add_argument("--vocoder", choices=("ihpr", "griffinlim"), default="ihpr")
    sp.add_argument("--iters", type=_nonneg_int, help="defaults to ihpr.max_iters")

    sp = add("eval", cmd_eval, "compare two WAV files")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--report", required=True)
    return p


def _one_line(e):
    msg = str(e) or type(e).__name__
    return " ".join(msg.split())


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {_one_line(e)}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as e:
        print(f"error: config {_one_line(e)}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, ArithmeticError, KeyError) as e:
        if isinstance(e, OSError) and e.filename is not None and not str(e).startswith("missing"):
            msg = f"{e.strerror or type(e).__name__}: {os.fspath(e.filename)}"
        else:
            msg = _one_line(e)
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
