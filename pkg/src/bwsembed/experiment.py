"""Experiment configuration and the pipelines behind the command line."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .autodiff import ParameterSet, read_manifest
from .model import EncoderConfig, MarginConfig, init_params
from .synth import OracleConfig, generate
from .trainer import Metrics, TrainConfig, TrainHistory, embed, eval_metrics, mean_pairwise_distance, train
from .trial_data import DatasetSplit, Item, Trial, split_dataset, validate_dataset

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    items: str | None = None
    trials: str | None = None
    latents: str | None = None


@dataclass
class SplitConfig:
    held_out_fraction: float = 0.1
    train_fraction: float = 0.8


@dataclass
class EncoderSection:
    hidden_dims: list[int] = field(default_factory=lambda: [64])
    d: int = 32


@dataclass
class AblationCell:
    name: str
    lambda_dmc: float = 0.0
    lambda_fr: float = 0.0
    fixed_margin: bool = False


ABLATION_ROWS = (
    AblationCell("A-f", 0.0, 0.0, fixed_margin=True),
    AblationCell("A-l", 0.0, 0.0),
    AblationCell("A-l-d", 1.0, 0.0),
    AblationCell("A-l-d-fr", 1.0, 1.0),
)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    n_seeds: int = 5
    paths: Paths = field(default_factory=Paths)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    margin: MarginConfig = field(default_factory=MarginConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: list[AblationCell] = field(default_factory=lambda: list(ABLATION_ROWS))

    @property
    def synthetic(self) -> bool:
        return self.paths.items is None and self.paths.trials is None

    def train_config(self, **overrides) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.seed, **overrides)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "paths": Paths,
    "oracle": OracleConfig,
    "split": SplitConfig,
    "encoder": EncoderSection,
    "margin": MarginConfig,
    "train": TrainConfig,
}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    if where == "train":
        known.discard("seed")  # the experiment-level seed is authoritative
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict, default_name: str = "experiment") -> ExperimentConfig:
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}")
    kwargs = {k: _build(cls, data[k], k) for k, cls in _SECTIONS.items() if k in data}
    if "ablation" in data:
        kwargs["ablation"] = [_build(AblationCell, c, "ablation[]") for c in data["ablation"]]
    for key in ("seed", "n_seeds"):
        if key in data:
            kwargs[key] = int(data[key])
    kwargs["name"] = str(data.get("name", default_name))
    cfg = ExperimentConfig(**kwargs)
    if cfg.n_seeds < 1:
        raise ConfigError("n_seeds must be >= 1")
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig(name="default")
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data, default_name=path.stem)


# -- data ------------------------------------------------------------------


@dataclass
class Dataset:
    items: list[Item]
    trials: list[Trial]
    latents: dict[str, float] | None = None


def load_data(cfg: ExperimentConfig, seed_offset: int = 0) -> Dataset:
    """Read the configured files, or synthesise a dataset when no paths are given."""
    if cfg.synthetic:
        oracle = dataclasses.replace(cfg.oracle, seed=cfg.oracle.seed + seed_offset)
        items, trials = generate(oracle)
        return Dataset(items, trials, {it.id: it.latent for it in items})
    for label, p in (("items", cfg.paths.items), ("trials", cfg.paths.trials)):
        if p is None:
            raise ConfigError(f"paths.{label} is required when reading data from disk")
        if not Path(p).exists():
            raise FileNotFoundError(f"{label} path not found: {p}")
    items = fileio.read_items(cfg.paths.items)
    trials = fileio.read_trials(cfg.paths.trials)
    issues = validate_dataset(items, trials)
    if issues:
        shown = "; ".join(f"{i.kind} {i.where}: {i.message}" for i in issues[:5])
        raise ConfigError(f"dataset has {len(issues)} problem(s): {shown}")
    latents = fileio.read_latents(cfg.paths.latents) if cfg.paths.latents else None
    return Dataset(items, trials, latents)


def make_split(cfg: ExperimentConfig, data: Dataset, seed: int) -> DatasetSplit:
    return split_dataset(data.items, data.trials, cfg.split.held_out_fraction, cfg.split.train_fraction, seed)


def encoder_config(cfg: ExperimentConfig, items: list[Item], seed: int) -> EncoderConfig:
    return EncoderConfig(items[0].feature_dim, list(cfg.encoder.hidden_dims), cfg.encoder.d, seed)


def fresh_params(cfg: ExperimentConfig, items: list[Item], seed: int) -> ParameterSet:
    return init_params(encoder_config(cfg, items, seed), cfg.margin)


def check_manifest(checkpoint, cfg: ExperimentConfig, items: list[Item]) -> None:
    expected = fresh_params(cfg, items, 0).shapes()
    found = read_manifest(checkpoint)
    if found != expected:
        diffs = [
            f"{name}: checkpoint {found.get(name)} vs config {expected.get(name)}"
            for name in sorted(set(found) | set(expected))
            if found.get(name) != expected.get(name)
        ]
        raise ConfigError("checkpoint manifest conflicts with config: " + "; ".join(diffs[:5]))


# -- runs ------------------------------------------------------------------


@dataclass
class RunResult:
    params: ParameterSet
    history: TrainHistory
    split: DatasetSplit
    eval: Metrics
    eval_spread: float


def run_training(cfg: ExperimentConfig, data: Dataset, seed: int, on_eval=None, **overrides) -> RunResult:
    split = make_split(cfg, data, seed)
    if not split.train_trials or not split.val_trials:
        raise ConfigError("degenerate split: train and validation sets must be non-empty")
    params = fresh_params(cfg, data.items, seed)
    tcfg = dataclasses.replace(cfg.train_config(**overrides), seed=seed)
    best, history = train(tcfg, split, params, data.items, cfg.margin, on_eval=on_eval)
    metrics = eval_metrics(best, split.eval_trials, data.items)
    held = sorted({i for t in split.eval_trials for i in t.item_ids})
    spread = mean_pairwise_distance(np.array(list(embed(history.last_params, data.items, held).values()))) if held else 0.0
    return RunResult(best, history, split, metrics, spread)


@dataclass
class AblationRow:
    cell: AblationCell
    fr: list[float] = field(default_factory=list)
    wat: list[float] = field(default_factory=list)
    spread: list[float] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        def stats(xs):
            return (float(np.mean(xs)), float(np.std(xs))) if xs else (float("nan"), float("nan"))

        fr_m, fr_s = stats(self.fr)
        wat_m, wat_s = stats(self.wat)
        return {
            "model": self.cell.name,
            "lambda_dmc": "-" if self.cell.fixed_margin else self.cell.lambda_dmc,
            "lambda_fr": "-" if self.cell.fixed_margin else self.cell.lambda_fr,
            "fr_mean": fr_m,
            "fr_std": fr_s,
            "wat_mean": wat_m,
            "wat_std": wat_s,
            "last_val_spread": float(np.mean(self.spread)) if self.spread else float("nan"),
            "runs": len(self.fr),
            "failed": len(self.failures),
        }


def run_ablation(cfg: ExperimentConfig, progress=None) -> list[AblationRow]:
    """Every ablation cell over ``n_seeds`` seeds; failed runs are recorded, not raised.

    For synthetic data each seed also regenerates the dataset (oracle seed + k).
    """
    rows = [AblationRow(cell) for cell in cfg.ablation]
    data = None if cfg.synthetic else load_data(cfg)
    for k in range(cfg.n_seeds):
        seed = cfg.seed + k
        if cfg.synthetic:
            data = load_data(cfg, seed_offset=k)
        for row in rows:
            c = row.cell
            try:
                res = run_training(
                    cfg, data, seed,
                    lambda_dmc=c.lambda_dmc, lambda_fr=c.lambda_fr, fixed_margin=c.fixed_margin,
                )  # fmt: skip
            except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the grid
                log.exception("ablation cell %s seed %d failed", c.name, seed)
                row.failures.append(f"{c.name} seed {seed}: {exc}")
                continue
            row.fr.append(res.eval.fr_percent)
            row.wat.append(res.eval.wat_percent)
            row.spread.append(res.history.records[-1].val_spread)
            if progress:
                progress(c.name, seed, res)
    return rows


def format_table(rows: list[AblationRow]) -> str:
    lines = [f"{'Model':<10} {'l_dmc':>6} {'l_fr':>6} {'FR':>15} {'WAT':>15} {'val spread':>11}"]
    for row in rows:
        s = row.summary()
        flag = f"  ({s['failed']} failed)" if s["failed"] else ""
        lines.append(
            f"{s['model']:<10} {s['lambda_dmc']!s:>6} {s['lambda_fr']!s:>6} "
            f"{s['fr_mean']:7.2f} ± {s['fr_std']:5.2f} {s['wat_mean']:7.2f} ± {s['wat_std']:5.2f} "
            f"{s['last_val_spread']:11.3e}{flag}"
        )
    return "\n".join(lines)
