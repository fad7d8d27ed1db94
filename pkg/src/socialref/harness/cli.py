"""Command-line entry point: gen, train, eval, ablate, gradcheck, agreement."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from socialref.corpus.agreement import RELIABLE_ALPHA, RatingMatrix, krippendorff_alpha
from socialref.corpus.generator import GenConfig, generate_corpus
from socialref.errors import ConfigError, ContractViolation, DataError, DimensionError, NumericError
from socialref.harness.config import RunConfig, read_kv

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4


def _run_flags(p):
    p.add_argument("--task", choices=("sti", "pcr", "mpp"))
    p.add_argument("--preset", choices=("desk", "paper"))
    p.add_argument("--seed", type=int)
    p.add_argument("--config", type=Path, help="flat key=value run config")
    p.add_argument("--context-n", type=int, dest="context_n")
    p.add_argument("--frames", type=int)
    p.add_argument("--ablation", help="comma list of no-visual,no-gesture,no-gaze,no-permutation,no-correction")
    p.add_argument("--epochs", type=int)
    p.add_argument("--corpus", help="corpus directory written by `gen`")
    p.add_argument("--out", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="socialref", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic corpus from a generator config")
    g.add_argument("--config", type=Path, help="flat key=value generator config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model and write metrics + best checkpoint")
    _run_flags(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the run's test split")
    _run_flags(e)
    e.add_argument("--checkpoint", required=True, type=Path)
    e.add_argument("--shuffled", action="store_true", help="relabel players randomly per test instance")

    a = sub.add_parser("ablate", help="run ablation tables with shared seeds")
    _run_flags(a)
    a.add_argument("--tables", default="features", help="comma list of features,permutation,correction,context,frames")

    sub.add_parser("gradcheck", help="finite-difference checks of every primitive and the full model")

    k = sub.add_parser("agreement", help="Krippendorff's alpha of a ratings CSV (items x annotators)")
    k.add_argument("ratings", type=Path)
    return parser


def run_config(args):
    mapping = read_kv(args.config) if getattr(args, "config", None) else {}
    for key in ("task", "preset", "seed", "context_n", "frames", "ablation", "epochs", "corpus", "out"):
        value = getattr(args, key, None)
        if value is not None:
            mapping[key] = value
    return RunConfig.from_mapping(mapping)


def _print(msg):
    print(msg, flush=True)


def cmd_gen(args):
    mapping = read_kv(args.config) if args.config else {}
    if args.seed is not None:
        mapping["seed"] = args.seed
    gen = GenConfig.from_mapping(mapping)
    from socialref.harness.data import write_corpus

    path = write_corpus(args.out, generate_corpus(gen), gen)
    _print(f"wrote {gen.sessions} sessions to {path}")
    return EXIT_OK


def cmd_train(args):
    from socialref.harness.train import train

    cfg = run_config(args)
    res = train(cfg, log=_print)
    _print(f"best accuracy {res.best.accuracy:.4f} at epoch {res.best.epoch}; checkpoint {res.checkpoint_path}")
    return EXIT_OK


def cmd_eval(args):
    from socialref.harness.train import evaluate

    cfg = run_config(args)
    rec = evaluate(args.checkpoint, cfg, shuffled=args.shuffled)
    p, r = rec.macro
    _print(f"accuracy {rec.accuracy:.4f}  macro-P {p:.4f}  macro-R {r:.4f}  n={rec.n_eval}  unknown={rec.n_unknown}")
    if rec.accuracy_no_everyone == rec.accuracy_no_everyone:
        _print(f"accuracy without EVERYONE {rec.accuracy_no_everyone:.4f}")
    return EXIT_OK


def cmd_ablate(args):
    from socialref.harness.ablate import ablate

    cfg = run_config(args)
    rows, path = ablate(cfg, [t.strip() for t in args.tables.split(",") if t.strip()], log=_print)
    for r in rows:
        _print(f"{r['table']:12s} {r['row']:18s} acc {r['accuracy']}"
               + (f"  shuffled {r['accuracy_shuffled']}" if r["accuracy_shuffled"] else ""))
    _print(f"table written to {path}")
    return EXIT_OK


def cmd_gradcheck(args):
    from socialref.harness.gradcheck import report, run_all

    primitives, e2e = run_all()
    _print(report(primitives, e2e))
    ok = all(r.passed for r in primitives) and e2e.passed
    return EXIT_OK if ok else EXIT_FAIL


def cmd_agreement(args):
    alpha = krippendorff_alpha(RatingMatrix.from_csv(args.ratings))
    ok = alpha > RELIABLE_ALPHA
    _print(f"alpha {alpha:.6f}  {'PASS' if ok else 'FAIL'} (reliable above {RELIABLE_ALPHA})")
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "gradcheck": cmd_gradcheck, "agreement": cmd_agreement}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ContractViolation, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
