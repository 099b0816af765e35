"""Command-line entry point: ``bwsembed {synth,featurize,train,eval,ablate,export}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import audio, fileio
from .analysis import count_scores, export_space, pca_project, spearman, write_scores
from .autodiff import NonFiniteError, load_params, save_params
from .experiment import (
    ConfigError,
    ExperimentConfig,
    check_manifest,
    format_table,
    load_config,
    load_data,
    make_split,
    run_ablation,
    run_training,
)
from .trainer import eval_metrics, embed

log = logging.getLogger("bwsembed")


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out) / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metrics_dict(m) -> dict:
    return dataclasses.asdict(m)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def cmd_synth(args, cfg: ExperimentConfig) -> int:
    oracle = cfg.oracle if args.seed is None else dataclasses.replace(cfg.oracle, seed=args.seed)
    problems = oracle.problems()
    if problems:
        raise ConfigError("invalid oracle config: " + "; ".join(problems))
    cfg = dataclasses.replace(cfg, oracle=oracle)
    data = load_data(cfg)
    out = _out_dir(args, cfg)
    fileio.write_items(out / "items", data.items)
    fileio.write_trials(out / "trials.jsonl", data.trials)
    fileio.write_latents(out / "latents.csv", data.items)
    counts = np.array([s.n_appearances for s in count_scores(data.trials)])
    print(f"items: {len(data.items)}  trials: {len(data.trials)}  N: {oracle.trial_size}")
    print(f"appearances per item: min {counts.min()}  mean {counts.mean():.2f}  max {counts.max()}")
    print(f"written to {out}")
    return 0


def cmd_featurize(args, cfg: ExperimentConfig) -> int:
    wav_dir = Path(args.wav_dir)
    if not wav_dir.is_dir():
        raise FileNotFoundError(f"WAV directory not found: {wav_dir}")
    out = Path(args.features) if args.features else _out_dir(args, cfg) / "items"
    out.mkdir(parents=True, exist_ok=True)
    wavs = sorted(p for p in wav_dir.iterdir() if p.suffix.lower() == ".wav")
    if not wavs:
        log.warning("no WAV files in %s", wav_dir)
        return 0
    failures = []
    for path in wavs:
        try:
            samples, sr = audio.read_wav(path)
            mel = audio.log_mel(samples, sr)
        except audio.AudioError as exc:
            failures.append(f"{path.name}: {exc}")
            continue
        meta = {**mel.metadata(), "source": path.name, "samples": len(samples)}
        fileio.write_features(out / f"{path.stem}{fileio.FEATURE_SUFFIX}", mel.values, meta)
    print(f"featurized {len(wavs) - len(failures)} of {len(wavs)} files into {out}")
    for f in failures:
        print(f"FAILED {f}", file=sys.stderr)
    return 1 if failures else 0


def _train_overrides(args) -> dict:
    over = {}
    if args.lambda_dmc is not None:
        over["lambda_dmc"] = args.lambda_dmc
    if args.lambda_fr is not None:
        over["lambda_fr"] = args.lambda_fr
    if args.fixed_margin:
        over["fixed_margin"] = True
    if args.max_steps is not None:
        over["max_steps"] = args.max_steps
    return over


def cmd_train(args, cfg: ExperimentConfig) -> int:
    cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **_train_overrides(args)))
    data = load_data(cfg)
    out = _out_dir(args, cfg)

    def progress(rec):
        log.info("step %d  total %.5f  val FR %.2f", rec.step, rec.total, rec.val.fr_percent)

    res = run_training(cfg, data, cfg.seed, on_eval=progress)
    res.history.write_csv(out / "history.csv")
    save_params(out / "best.params", res.params)
    save_params(out / "last.params", res.history.last_params)
    _write_json(out / "config.json", cfg.to_dict())
    _write_json(
        out / "metrics.json",
        {"eval": _metrics_dict(res.eval), "best_step": res.history.best_step, "stopped_early": res.history.stopped_early},
    )
    print(f"best step {res.history.best_step}  eval FR {res.eval.fr_percent:.2f}%  WAT {res.eval.wat_percent:.2f}%")
    return 0


def _checkpoint(args, cfg) -> Path:
    path = Path(args.checkpoint) if args.checkpoint else Path(args.out) / cfg.name / "best.params"
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return path


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    data = load_data(cfg)
    ckpt = _checkpoint(args, cfg)
    check_manifest(ckpt, cfg, data.items)
    params = load_params(ckpt)
    trials = fileio.read_trials(args.trials) if args.trials else make_split(cfg, data, cfg.seed).eval_trials
    m = eval_metrics(params, trials, data.items)
    out = _out_dir(args, cfg)
    _write_json(out / "eval.json", _metrics_dict(m))
    print(f"FR {m.fr_percent:.2f}%  WAT {m.wat_percent:.2f}%  ({m.n_trials} trials, {m.n_relations} relations)")
    return 0


def cmd_ablate(args, cfg: ExperimentConfig) -> int:
    out = _out_dir(args, cfg)

    def progress(name, seed, res):
        print(f"{name:<10} seed {seed}: FR {res.eval.fr_percent:.2f}  WAT {res.eval.wat_percent:.2f}", flush=True)

    rows = run_ablation(cfg, progress=progress)
    table = format_table(rows)
    print(table)
    (out / "ablation.txt").write_text(table + "\n")
    summaries = [r.summary() for r in rows]
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summaries[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(summaries)
    failures = [f for r in rows for f in r.failures]
    for f in failures:
        print(f"FAILED {f}", file=sys.stderr)
    return 1 if failures else 0


def cmd_export(args, cfg: ExperimentConfig) -> int:
    data = load_data(cfg)
    ckpt = _checkpoint(args, cfg)
    check_manifest(ckpt, cfg, data.items)
    params = load_params(ckpt)
    ids = [it.id for it in data.items]
    H = np.array(list(embed(params, data.items, ids).values()))
    by_id = {s.item_id: s for s in count_scores(data.trials)}
    scores = [by_id[i].score if i in by_id else None for i in ids]
    attrs = {i: t.attribute for t in data.trials for i in t.item_ids}
    out = _out_dir(args, cfg)
    export_space(ids, H, scores, out / "space.csv", [attrs.get(i, "") for i in ids])
    write_scores(out / "scores.csv", list(by_id.values()))
    print(f"exported {len(ids)} items to {out / 'space.csv'}")
    if data.latents:
        rho = spearman([data.latents[i] for i in ids], pca_project(H).coords[:, 0])
        print(f"Spearman(latent, pca_x) = {rho:.4f}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", default="runs", help="output root (default: runs)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="bwsembed", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p = sub.add_parser("featurize", parents=[common], help="log-mel features for a WAV directory")
    p.add_argument("wav_dir")
    p.add_argument("--features", help="feature output directory (default: <out>/<name>/items)")
    for name in ("train", "ablate"):
        p = sub.add_parser(name, parents=[common])
        if name == "train":
            p.add_argument("--lambda-dmc", type=float)
            p.add_argument("--lambda-fr", type=float)
            p.add_argument("--fixed-margin", action="store_true")
            p.add_argument("--max-steps", type=int)
    p = sub.add_parser("eval", parents=[common], help="metrics of a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--trials", help="trial file to score (default: the held-out split)")
    p = sub.add_parser("export", parents=[common], help="embedding/PCA/score table")
    p.add_argument("--checkpoint")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None and args.command != "synth":
            cfg = dataclasses.replace(cfg, seed=args.seed)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, FileNotFoundError, ValueError, NonFiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
