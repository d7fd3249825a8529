"""Command-line entry point: ``gaitprivacy <subcommand> [options]``.

Exit codes: 0 success, 1 domain error (bad data, invalid weights, broken
contracts), 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attackers import AttackerConfig, build_attacker
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, read_config, coerce_into
from .data import DataError, SyntheticConfig, build_windows, generate_synthetic, load_csv, normalize_stream, write_csv
from .evaluation import (EvalReport, LeakageError, MetricError, ROCCurve, build_report, evaluate_attacker, report_csv)
from .losses import LossError, LossWeights
from .pipeline import (ExperimentConfig, config_echo, load_corpus, run_experiment, split_corpus,
                       train_stage1)
from .privatizer import AutoencoderConfig, build_privatizer, transform_stream
from .seeding import derive_seed, set_deterministic
from .trainer import ContractError, TrainingDiverged, evaluate_domain, train_attacker, train_privatizer_stage2
from .verifier import BuildError, ShapeError

log = logging.getLogger("gaitprivacy")

RUNS_ENV = "GAITPRIVACY_RUNS_DIR"
DOMAIN_ERRORS = (DataError, LossError, ContractError, CheckpointError, ConfigError, MetricError, LeakageError,
                 BuildError, ShapeError, TrainingDiverged, FileNotFoundError, ValueError)
# --epochs / --lr apply to the stage a subcommand trains
STAGE_OF = {"train-verifier": "verifier", "train-privatizer": "privatizer", "train-attacker": "attacker",
            "evaluate": "attacker", "sweep": "privatizer"}


class UsageError(Exception):
    pass


# -- configuration -------------------------------------------------------------

def load_settings(args) -> tuple[ExperimentConfig, SyntheticConfig]:
    values = read_config(args.config) if args.config else {}
    known = {f.name for cls in (ExperimentConfig, SyntheticConfig) for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{args.config}: unknown keys {unknown}")
    exp = coerce_into(ExperimentConfig, values)
    syn = coerce_into(SyntheticConfig, values)
    seed = args.seed if args.seed is not None else exp.seed
    overrides = {"seed": seed}
    stage = STAGE_OF.get(args.command)
    if args.epochs is not None:
        overrides[f"{stage}_epochs"] = args.epochs
    if args.lr is not None:
        overrides[f"{stage}_learning_rate"] = args.lr
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    return dataclasses.replace(exp, **overrides), dataclasses.replace(syn, seed=seed)


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def run_directory(args, seed: int) -> tuple[str, Path]:
    if args.out:
        out = Path(args.out)
        return out.name, out
    run_id = f"{args.command}-{time.strftime('%Y%m%d-%H%M%S')}-s{seed}"
    return run_id, Path(os.environ.get(RUNS_ENV, "runs")) / run_id


def write_manifest(run_dir: Path, run_id: str, args, exp: ExperimentConfig, syn: SyntheticConfig,
                   checkpoints: dict) -> Path:
    """Write ``manifest.json`` once, atomically, at run start."""
    manifest = {
        "run_id": run_id,
        "command": args.command,
        "argv": args.argv,
        "version": __version__,
        "git_describe": git_describe(),
        "seed": exp.seed,
        "seeds": {name: derive_seed(exp.seed, name) for name in ("verifier", "privatizer", "attacker", "split")},
        "deterministic": bool(args.deterministic),
        "config": {"experiment": config_echo(exp), "synthetic": config_echo(syn)},
        "checkpoints": {k: str(v) for k, v in checkpoints.items()},
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "manifest.json"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=1))
    os.replace(tmp, path)
    return path


def _corpus(args, exp, syn, privatizer=None):
    normalize = not args.no_normalize
    if privatizer is None:
        corpus = load_corpus(args.dataset, syn, normalize)
    else:
        streams = load_csv(args.dataset) if args.dataset else generate_synthetic(syn)
        if normalize:
            streams = [normalize_stream(s) for s in streams]
        corpus = build_windows([transform_stream(privatizer, s) for s in streams], normalize=False)
    return split_corpus(corpus, exp.n_eval_subjects, exp.seed)


def _model(path, kind):
    if not path:
        raise UsageError(f"--model is required (a {kind} checkpoint)")
    model, payload = load_checkpoint(path, expect=kind)
    return model, payload


def _ckpts(run_dir, *names):
    return {f"{n}/{k}": run_dir / n / f"{k}.ckpt" for n in names for k in ("best", "last")}


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args, exp, syn, run_dir):
    streams = generate_synthetic(syn)
    path = run_dir / "corpus.csv"
    write_csv(path, streams)
    print(f"wrote {len(streams)} streams from {syn.n_subjects} subjects to {path}")


def cmd_train_verifier(args, exp, syn, run_dir):
    dev, ev = _corpus(args, exp, syn)
    verifier, history = train_stage1(dev, exp, ev, run_dir)
    save_checkpoint(run_dir / "verifier" / "best.ckpt", verifier, "verifier", exp.stage("verifier").seed,
                    {"train_subjects": list(dev.subjects), "best_epoch": history.best_epoch})
    last = history.records[-1] if history.records else None
    print(f"verifier: best epoch {history.best_epoch}, "
          f"val AUC {last.val_auc if last else float('nan'):.4f} -> {run_dir / 'verifier' / 'best.ckpt'}")


def cmd_train_privatizer(args, exp, syn, run_dir):
    weights = LossWeights(args.alpha, args.beta, args.gamma)
    verifier, _ = _model(args.model, "verifier")
    verifier.freeze()
    dev, ev = _corpus(args, exp, syn)
    config = exp.stage("privatizer")
    privatizer = build_privatizer(AutoencoderConfig(), config.seed)
    privatizer, history = train_privatizer_stage2(privatizer, verifier, dev, weights, config, exp.noise_bound,
                                                  checkpoint_dir=run_dir / "privatizer",
                                                  exclude_subjects=ev.subjects)
    history.write_csv(run_dir / "privatizer" / "history.csv")
    print(f"privatizer {weights.as_tuple()}: best epoch {history.best_epoch} -> {run_dir / 'privatizer' / 'best.ckpt'}")


def cmd_train_attacker(args, exp, syn, run_dir):
    privatizer = _model(args.model, "privatizer")[0] if args.model else None
    dev, ev = _corpus(args, exp, syn, privatizer)
    n_classes = 2 if args.attribute == "gender" else 4
    config = exp.stage("attacker")
    attacker = build_attacker(AttackerConfig(n_classes), derive_seed(config.seed, args.attribute))
    ckpt_dir = run_dir / f"attacker-{args.attribute}"
    attacker, history = train_attacker(attacker, dev, args.attribute, config, checkpoint_dir=ckpt_dir,
                                       exclude_subjects=ev.subjects)
    history.write_csv(ckpt_dir / "history.csv")
    _, auc = evaluate_attacker(attacker, ev, args.attribute)
    print(f"{args.attribute} attacker: evaluation AUC {auc:.4f} -> {ckpt_dir / 'best.ckpt'}")


def _write_eval(report: EvalReport, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "evaluation.csv").write_text(report_csv([report]))
    payload = {**report.row(), "roc": {k: c.to_dict() for k, c in report.curves.items()}}
    (run_dir / "evaluation.json").write_text(json.dumps(payload, indent=1))


def cmd_evaluate(args, exp, syn, run_dir):
    verifier, payload = _model(args.model, "verifier")
    privatizer = load_checkpoint(args.privatizer, expect="privatizer")[0] if args.privatizer else None
    dev, ev = _corpus(args, exp, syn, privatizer)
    train_subjects = payload["metadata"].get("train_subjects")
    leaked = set(train_subjects or ()) & set(ev.subjects)
    if leaked:
        raise LeakageError(f"evaluation subjects seen in verifier training: {sorted(leaked)}")
    report, _ = evaluate_domain(verifier, None, dev, ev, exp.stage("attacker"), derive_seed(exp.seed, "raw"),
                                eval_pairs=exp.eval_pairs, pair_seed=exp.seed)
    if privatizer is not None:
        report = dataclasses.replace(report, domain="transformed")
    _write_eval(report, run_dir)
    print(report_csv([report]), end="")


def cmd_sweep(args, exp, syn, run_dir):
    verifier = _model(args.model, "verifier")[0] if args.model else None
    dev, ev = _corpus(args, exp, syn)
    result = run_experiment(dev, ev, exp, run_dir, verifier=verifier)
    print(report_csv(result.reports), end="")


def cmd_transform(args, exp, syn, run_dir):
    privatizer, _ = _model(args.model, "privatizer")
    if not args.input:
        raise UsageError("--in is required")
    streams = load_csv(args.input)
    if not args.no_normalize:
        streams = [normalize_stream(s) for s in streams]
    out = Path(args.out) if args.out else run_dir / "transformed.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, [transform_stream(privatizer, s) for s in streams])
    print(f"wrote {out}")


def _load_eval(path) -> EvalReport:
    d = json.loads(Path(path).read_text())
    weights = LossWeights(float(d["alpha"]), float(d["beta"]), float(d["gamma"])) if d["alpha"] != "" else None
    curves = {k: ROCCurve(*(np.asarray(c[a]) for a in ("fpr", "tpr"))) for k, c in d["roc"].items()}
    return EvalReport(d["domain"], d["verification_auc"], d["gender_auc"], d["activity_auc"], weights,
                      d["n_pairs"], d["n_windows"], curves)


def cmd_report(args, exp, syn, run_dir):
    if not args.inputs:
        raise UsageError("report needs --in with at least one evaluation.json (raw domain first)")
    reports = [_load_eval(p) for p in args.inputs]
    paths = build_report(reports[0], reports[1:], run_dir)
    print(f"wrote {', '.join(str(p) for p in paths.values())}")


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic CSV corpus"),
    "train-verifier": (cmd_train_verifier, "stage 1: train the Siamese verifier"),
    "train-privatizer": (cmd_train_privatizer, "stage 2: train the privatizer against a frozen verifier"),
    "train-attacker": (cmd_train_attacker, "train a gender or activity attacker on raw or transformed data"),
    "evaluate": (cmd_evaluate, "verification and attacker AUCs on the evaluation subjects"),
    "sweep": (cmd_sweep, "stage 2 over the gamma grid plus the full report"),
    "transform": (cmd_transform, "apply a privatizer to a CSV corpus"),
    "report": (cmd_report, "rebuild CSV/JSON/SVG reports from evaluation JSON files"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="global seed (overrides the config file)")
    common.add_argument("--out", help="output directory (default: $%s/<run-id>)" % RUNS_ENV)
    common.add_argument("--deterministic", action="store_true", help="single-threaded deterministic kernels")
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--dataset", help="CSV corpus (default: synthetic corpus from the config)")
    common.add_argument("--model", help="checkpoint consumed by the subcommand")
    common.add_argument("--no-normalize", action="store_true", help="input CSV is already normalised/transformed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="gaitprivacy", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    subs = {name: sub.add_parser(name, parents=[common], help=help_) for name, (_, help_) in COMMANDS.items()}
    for name in ("train-privatizer",):
        subs[name].add_argument("--alpha", type=float, default=0.4)
        subs[name].add_argument("--beta", type=float, default=0.4)
        subs[name].add_argument("--gamma", type=float, default=0.2)
    subs["train-attacker"].add_argument("--attribute", choices=("gender", "activity"), required=True)
    subs["evaluate"].add_argument("--privatizer", help="privatizer checkpoint (transformed domain)")
    subs["transform"].add_argument("--in", dest="input", help="input CSV")
    subs["report"].add_argument("--in", dest="inputs", nargs="+", help="evaluation.json files, raw first")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "train-privatizer":
            LossWeights(args.alpha, args.beta, args.gamma)  # fail before any work
        exp, syn = load_settings(args)
        if args.deterministic:
            set_deterministic(True)
        run_id, run_dir = run_directory(args, exp.seed)
        if args.command != "transform" or not args.out:
            write_manifest(run_dir, run_id, args, exp, syn,
                           _ckpts(run_dir, *{"train-verifier": ["verifier"], "train-privatizer": ["privatizer"],
                                             "train-attacker": [f"attacker-{getattr(args, 'attribute', '')}"],
                                             "sweep": ["verifier"]}.get(args.command, [])))
        COMMANDS[args.command][0](args, exp, syn, run_dir)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gaitprivacy: error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"gaitprivacy: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
