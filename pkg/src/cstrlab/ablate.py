"""Ablation grids and the per-cell results store.

Three grids mirror the experiment tables: prediction head x objective,
backbone variants (Base, Base+EM, Base+EM+SADM), and training-time
augmentation on/off scored against a mildly noisy eval set. Each
(cell, seed) trains once and lands in one CSV named by a fingerprint of
the run spec, seed, dataset digest, and step budget, so an interrupted
grid resumes without retraining finished cells.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .config import TrainSettings, digest16
from .errors import DataError
from .model import ModelConfig, build_model
from .synth import Dataset
from .train import evaluate, train

DEFAULT_SEEDS = (0, 1, 2)


@dataclass(frozen=True)
class RunSpec:
    """One ablation cell: what to train and under which toggles."""

    table: str  # heads | backbone | augment
    label: str  # row label in the rendered table
    head: str
    loss: str
    em: bool
    sadm: Optional[bool]  # None = backbone profile default
    augment: bool
    seeds: tuple[int, ...] = DEFAULT_SEEDS

    def model_config(self, seed: int) -> ModelConfig:
        return ModelConfig(
            scale="toy",
            enhanced=self.em,
            head=self.head,
            objective=self.loss,
            seed=seed,
            sadm=self.sadm,
        )


def heads_grid(seeds: Sequence[int] = DEFAULT_SEEDS,
               heads: Sequence[str] = ("shpn", "sepn", "sppn"),
               losses: Sequence[str] = ("ctc", "ce")) -> list[RunSpec]:
    """Head x objective cells, six in full, on the enhanced backbone.

    The plain toy backbone leaves only four feature columns, too few for
    seven-character words under the per-column heads, so this grid keeps
    the enhanced profile and varies head and objective only.
    """
    return [
        RunSpec(table="heads", label=f"{h.upper()} {l.upper()}", head=h,
                loss=l, em=True, sadm=None, augment=False,
                seeds=tuple(seeds))
        for h in heads for l in losses
    ]


def backbone_grid(seeds: Sequence[int] = DEFAULT_SEEDS) -> list[RunSpec]:
    """Base, Base+EM, Base+EM+SADM with the pooled head and CE."""
    rows = [("Base", False, False), ("Base+EM", True, False),
            ("Base+EM+SADM", True, True)]
    return [
        RunSpec(table="backbone", label=label, head="sppn", loss="ce",
                em=em, sadm=sadm, augment=False, seeds=tuple(seeds))
        for label, em, sadm in rows
    ]


def augment_grid(seeds: Sequence[int] = DEFAULT_SEEDS) -> list[RunSpec]:
    """Full configuration with corruptions off vs on."""
    return [
        RunSpec(table="augment", label=label, head="sppn", loss="ce",
                em=True, sadm=True, augment=aug, seeds=tuple(seeds))
        for label, aug in (("Base", False), ("Base+DA", True))
    ]


GRID_BUILDERS = {
    "heads": heads_grid,
    "backbone": backbone_grid,
    "augment": augment_grid,
}

CELL_COLUMNS = ("table", "label", "head", "loss", "em", "sadm", "augment",
                "seed", "steps", "word_acc", "edit_dist", "wall_seconds")


def cell_fingerprint(spec: RunSpec, seed: int, manifest_digest: str,
                     steps: int) -> str:
    return digest16({
        "table": spec.table, "label": spec.label, "head": spec.head,
        "loss": spec.loss, "em": spec.em, "sadm": spec.sadm,
        "augment": spec.augment, "seed": seed, "steps": steps,
        "manifest": manifest_digest,
    })


@dataclass
class CellResult:
    spec: RunSpec
    seed: int
    fingerprint: str
    status: str  # trained | skipped | failed
    word_acc: Optional[float] = None


def _eval_dataset(spec: RunSpec, dataset: Dataset,
                  noisy_eval: Optional[Dataset]) -> Dataset:
    if spec.table == "augment":
        if noisy_eval is None:
            raise DataError(
                "the augmentation grid scores robustness and needs the "
                "noisy-eval dataset variant")
        return noisy_eval
    return dataset


def run_cells(specs: Sequence[RunSpec], dataset: Dataset,
              results_dir, steps: int = 1200, batch_size: int = 32,
              noisy_eval: Optional[Dataset] = None,
              echo=None) -> list[CellResult]:
    """Train every (cell, seed) not yet present in the results store.

    A crashed cell leaves a ``<fingerprint>.failed`` marker with the
    error text and does not block the rest of the grid; rerunning the
    grid retries failures and skips finished cells.
    """
    results_dir = Path(results_dir)
    results_dir.mkdir(parents=True, exist_ok=True)
    out: list[CellResult] = []
    for spec in specs:
        for seed in spec.seeds:
            fp = cell_fingerprint(spec, seed, dataset.manifest_digest, steps)
            cell_path = results_dir / f"{fp}.csv"
            failed_path = results_dir / f"{fp}.failed"
            if cell_path.exists():
                out.append(CellResult(spec, seed, fp, "skipped"))
                continue
            if echo:
                echo(f"[{spec.table}] {spec.label} seed={seed} fp={fp}")
            try:
                model = build_model(spec.model_config(seed))
                settings = TrainSettings(
                    batch_size=batch_size, total_steps=steps,
                    eval_every=steps, augment=spec.augment,
                    out_dir=str(results_dir / "runs" / fp),
                )
                result = train(model, dataset, settings)
                ev = _eval_dataset(spec, dataset, noisy_eval)
                scored = evaluate(model, ev.eval.images, ev.eval.labels)
                row = {
                    "table": spec.table, "label": spec.label,
                    "head": spec.head, "loss": spec.loss,
                    "em": spec.em, "sadm": spec.sadm,
                    "augment": spec.augment, "seed": seed, "steps": steps,
                    "word_acc": f"{scored['word_accuracy']:.4f}",
                    "edit_dist":
                        f"{scored['mean_normalized_edit_distance']:.4f}",
                    "wall_seconds": f"{result.wall_seconds:.3f}",
                }
                with open(cell_path, "w", newline="",
                          encoding="utf-8") as f:
                    writer = csv.DictWriter(f, fieldnames=CELL_COLUMNS)
                    writer.writeheader()
                    writer.writerow(row)
                failed_path.unlink(missing_ok=True)
                out.append(CellResult(spec, seed, fp, "trained",
                                      scored["word_accuracy"]))
            except Exception as e:  # isolate cell failures from the grid
                failed_path.write_text(f"{type(e).__name__}: {e}\n",
                                       encoding="utf-8")
                out.append(CellResult(spec, seed, fp, "failed"))
    return out


def read_results(results_dir) -> list[dict]:
    """Load every completed cell row from the store."""
    results_dir = Path(results_dir)
    if not results_dir.is_dir():
        raise DataError(f"results store {results_dir} does not exist")
    rows: list[dict] = []
    for path in sorted(results_dir.glob("*.csv")):
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or set(CELL_COLUMNS) - set(
                    reader.fieldnames):
                raise DataError(f"{path}: unrecognized cell file columns")
            for row in reader:
                row["fingerprint"] = path.stem
                rows.append(row)
    return rows
