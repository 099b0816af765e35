"""On-disk formats for trials, item features, latents and tables.

* Trial file: one JSON object per line ``{attribute, item_ids, best, worst[, name]}``.
* Feature file: ``# key=value`` metadata lines, a ``frames feature_dim`` header
  row, then one whitespace-separated row per frame (17 significant digits).
* Item directory: one ``<item_id>.feat`` feature file per item.
* Latent sidecar: two-column CSV ``item_id,latent``.
"""

from __future__ import annotations

import csv
import json
from collections.abc import Iterable, Mapping
from pathlib import Path

import numpy as np

from .trial_data import Item, Trial

FEATURE_SUFFIX = ".feat"


def write_trials(path, trials: Iterable[Trial]) -> None:
    with open(path, "w") as fh:
        for t in trials:
            record = {"attribute": t.attribute, "item_ids": list(t.item_ids), "best": t.best, "worst": t.worst}
            if t.name:
                record["name"] = t.name
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_trials(path) -> list[Trial]:
    trials = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                trials.append(
                    Trial(
                        str(rec["attribute"]),
                        tuple(str(i) for i in rec["item_ids"]),
                        int(rec["best"]),
                        int(rec["worst"]),
                        str(rec.get("name", f"{Path(path).stem}:{lineno}")),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed trial record ({exc})") from exc
    return trials


def write_features(path, features, metadata: Mapping | None = None) -> None:
    features = np.asarray(features, dtype=np.float64)
    with open(path, "w") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}={value}\n")
        fh.write(f"{features.shape[0]} {features.shape[1]}\n")
        for row in features:
            fh.write(" ".join(format(x, ".17g") for x in row) + "\n")


def read_features(path) -> tuple[np.ndarray, dict[str, str]]:
    metadata: dict[str, str] = {}
    with open(path) as fh:
        line = fh.readline()
        while line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            metadata[key.strip()] = value.strip()
            line = fh.readline()
        try:
            frames, width = (int(x) for x in line.split())
        except ValueError as exc:
            raise ValueError(f"{path}: missing 'frames feature_dim' header row") from exc
        data = np.loadtxt(fh, ndmin=2) if frames else np.zeros((0, width))
    if data.shape != (frames, width):
        raise ValueError(f"{path}: header says {frames}x{width}, found {data.shape[0]}x{data.shape[1]}")
    return data, metadata


def write_items(directory, items: Iterable[Item], metadata: Mapping | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for it in items:
        write_features(directory / f"{it.id}{FEATURE_SUFFIX}", it.features, metadata)


def read_items(directory) -> list[Item]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"item directory not found: {directory}")
    return [Item(p.stem, read_features(p)[0]) for p in sorted(directory.glob(f"*{FEATURE_SUFFIX}"))]


def write_latents(path, items: Iterable[Item]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "latent"])
        for it in items:
            writer.writerow([it.id, repr(it.latent)])


def read_latents(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        return {row["item_id"]: float(row["latent"]) for row in csv.DictReader(fh)}
