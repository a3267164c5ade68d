"""Desk-scale experiment orchestration.

Three studies over the small model families:

* `run_double_descent`: width sweep under label noise, with fragmentation,
  pairwise-seed reproducibility, margins, and train-error breakdowns per
  width. Cells are persisted as checkpoints and reused on rerun, so an
  interrupted sweep resumes to a bit-identical report.
* `run_optimizer_comparison`: test accuracy and pairwise reproducibility per
  (architecture, optimizer) cell, including the two-step SAM variant.
* `run_distillation_comparison`: reproducibility gain of distilled students
  over identically initialized vanilla controls, relative to their teacher.

Seed conventions: the entries of `seeds` act directly as initialization seeds
(variation_mode "init_seed") or as data-order seeds (variation_mode
"data_order"); everything else (dataset generation, label noise, triplet and
margin-point sampling) derives from the master seed through keyed streams.
Triplet sets and margin points are drawn once per noise block and shared by
every cell so metric curves are comparable across widths.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import models as M
from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import Dataset, gen_synthetic, inject_label_noise
from .errors import TrainingError, UsageError
from .metrics import FragReport, error_breakdown, fragmentation, margins, reproducibility
from .optim import OptimizerSpec
from .plane import sample_triplets
from .seeding import derive_seed, rng_for
from .training import distill, train

# Interpolation is declared at the smallest width whose mean train error on
# assigned labels drops below this.
INTERPOLATION_TRAIN_ERROR = 0.005


@dataclass(frozen=True)
class SweepConfig:
    out_dir: str
    widths: tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64, 128, 256)
    noise_rates: tuple[float, ...] = (0.2,)
    seeds: tuple[int, ...] = (0, 1, 2)
    variation_mode: str = "init_seed"      # "init_seed" | "data_order"
    # dataset (synthetic fallback; desk-scale stand-in for an image subset)
    dataset_kind: str = "blobs"
    layout: str = "line"
    classes: int = 4
    dims: int = 256
    sigma: float = 0.08
    nuisance_mode: str = "uniform"
    n_train_per_class: int = 1000
    n_test_per_class: int = 250
    # model family under sweep
    family: str = "mlp"
    depth: int = 1
    # training
    epochs: int = 400
    batch_size: int = 128
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    rho: float = 0.01
    # metrics
    metric_repro: bool = True
    metric_frag: bool = True
    metric_margins: bool = True
    metric_breakdown: bool = True
    triplet_mode: str = "distinct_class"
    n_triplets: int = 100
    resolution: tuple[int, int] = (50, 50)
    n_margin_points: int = 200
    n_margin_dirs: int = 10
    master_seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if len(self.widths) < 2:
            raise UsageError("a sweep needs at least 2 widths")
        if not self.seeds:
            raise UsageError("seeds list must be nonempty")
        if self.variation_mode not in ("init_seed", "data_order"):
            raise UsageError(f"unknown variation_mode {self.variation_mode!r}")

    def optimizer_spec(self) -> OptimizerSpec:
        return OptimizerSpec(kind=self.optimizer, learning_rate=self.learning_rate,
                             momentum=self.momentum, rho=self.rho)

    def to_json_dict(self) -> dict:
        d = asdict(self)
        for key in ("widths", "noise_rates", "seeds", "resolution"):
            d[key] = list(d[key])
        return d


def sweep_datasets(cfg: SweepConfig, noise: float) -> tuple[Dataset, Dataset]:
    """Train set with `noise` label noise plus the clean test set."""
    data_seed = derive_seed(cfg.master_seed, "dataset")
    train_ds = gen_synthetic(cfg.dataset_kind, cfg.n_train_per_class, cfg.classes,
                             cfg.dims, cfg.sigma, data_seed, split="train",
                             nuisance_mode=cfg.nuisance_mode, layout=cfg.layout)
    test_ds = gen_synthetic(cfg.dataset_kind, cfg.n_test_per_class, cfg.classes,
                            cfg.dims, cfg.sigma, data_seed, split="test",
                            nuisance_mode=cfg.nuisance_mode, layout=cfg.layout)
    if noise > 0:
        train_ds = inject_label_noise(train_ds, noise, derive_seed(cfg.master_seed, "noise", noise))
    return train_ds, test_ds


def class_balanced_subset(ds: Dataset, per_class: int, seed: int) -> Dataset:
    """Seeded class-balanced subsample (used when sweeping a loaded dataset)."""
    rng = np.random.default_rng(derive_seed(seed, "balanced-subset"))
    picks = []
    for c in np.unique(ds.true_labels):
        pool = np.flatnonzero(ds.true_labels == c)
        if len(pool) < per_class:
            raise UsageError(f"class {c} has only {len(pool)} samples, need {per_class}")
        picks.append(rng.choice(pool, size=per_class, replace=False))
    return ds.subset(np.sort(np.concatenate(picks)))


def _cell_key(width: int, noise: float, seed: int) -> str:
    return f"w{width}_n{noise:g}_s{seed}"


def _cell_seeds(cfg: SweepConfig, noise: float, seed: int) -> tuple[int, int]:
    """(init_seed, data_seed) for a cell under the configured variation mode."""
    if cfg.variation_mode == "init_seed":
        return seed, derive_seed(cfg.master_seed, "data-order", noise)
    return derive_seed(cfg.master_seed, "shared-init", noise), seed


def train_or_load_cell(
    cfg: SweepConfig,
    train_ds: Dataset,
    test_ds: Dataset,
    width: int,
    noise: float,
    seed: int,
) -> dict:
    """Train one (width, noise, seed) cell or reuse its persisted checkpoint."""
    key = _cell_key(width, noise, seed)
    ckpt_dir = Path(cfg.out_dir) / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = ckpt_dir / f"{key}.ckpt"
    curves_path = ckpt_dir / f"{key}.curves.json"

    init_seed, data_seed = _cell_seeds(cfg, noise, seed)
    cell: dict = {"width": width, "noise": noise, "seed": seed,
                  "checkpoint": str(ckpt_path.relative_to(cfg.out_dir)), "diverged": False}

    if ckpt_path.exists() and curves_path.exists():
        model = load_checkpoint(ckpt_path)
        curves = json.loads(curves_path.read_text())
    else:
        spec = M.ModelSpec(cfg.family, width, cfg.depth, train_ds.dim,
                           train_ds.num_classes, init_seed=init_seed)
        try:
            model, tc = train(M.init_model(spec), train_ds, cfg.optimizer_spec(),
                              cfg.epochs, cfg.batch_size, data_seed=data_seed,
                              test_dataset=test_ds)
        except TrainingError as exc:
            cell.update(diverged=True, diverged_epoch=exc.epoch)
            return cell
        curves = {"train_errors": tc.train_errors, "test_errors": tc.test_errors}
        tmp = curves_path.with_name(curves_path.name + ".tmp")
        tmp.write_text(json.dumps(curves))
        tmp.replace(curves_path)
        save_checkpoint(model, ckpt_path)  # written last: presence marks the cell complete

    cell.update(
        model_id=M.model_id(model),
        train_error=curves["train_errors"][-1],
        test_error=curves["test_errors"][-1],
        curves=curves,
    )
    if cfg.metric_breakdown:
        cell["breakdown"] = error_breakdown(model, train_ds)
    cell["_model"] = model
    return cell


@dataclass
class SweepReport:
    config: dict
    noise_blocks: dict   # str(noise) -> block dict
    csv_text: str

    def to_json_dict(self) -> dict:
        return {"config": self.config, "noise_blocks": self.noise_blocks}


def _aggregate_width(cells: list[dict]) -> dict:
    trained = [c for c in cells if not c["diverged"]]
    agg = {
        "n_trained": len(trained),
        "mean_train_error": float(np.mean([c["train_error"] for c in trained])) if trained else None,
        "mean_test_error": float(np.mean([c["test_error"] for c in trained])) if trained else None,
    }
    return agg


def run_double_descent(cfg: SweepConfig) -> SweepReport:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    noise_blocks: dict = {}

    for noise in cfg.noise_rates:
        train_ds, test_ds = sweep_datasets(cfg, noise)
        triplet_seed = derive_seed(cfg.master_seed, "triplets", noise)
        triplets = sample_triplets(train_ds, cfg.triplet_mode, cfg.n_triplets, triplet_seed)

        point_rng = rng_for(cfg.master_seed, "margin-points", noise)
        all_idx = point_rng.choice(len(train_ds), size=min(cfg.n_margin_points, len(train_ds)),
                                   replace=False)
        noisy_pool = np.flatnonzero(train_ds.noise_mask)
        mis_idx = None
        if len(noisy_pool):
            take = min(cfg.n_margin_points, len(noisy_pool))
            mis_idx = noisy_pool[point_rng.choice(len(noisy_pool), size=take, replace=False)]

        cells = []
        for width in cfg.widths:
            for seed in cfg.seeds:
                cells.append(train_or_load_cell(cfg, train_ds, test_ds, width, noise, seed))

        aggregates = []
        for width in cfg.widths:
            width_cells = [c for c in cells if c["width"] == width]
            trained = [c for c in width_cells if not c["diverged"]]
            agg = {"width": width, **_aggregate_width(width_cells)}

            if cfg.metric_breakdown and trained:
                agg["mean_clean_error"] = float(np.mean(
                    [c["breakdown"]["clean_subset"] for c in trained]))
                noisy_vals = [c["breakdown"]["noisy_subset"] for c in trained
                              if c["breakdown"]["noisy_subset"] is not None]
                agg["mean_noisy_error"] = float(np.mean(noisy_vals)) if noisy_vals else None

            if cfg.metric_frag and trained:
                frs = [fragmentation(c["_model"], triplets, cfg.resolution, jobs=cfg.jobs).mean
                       for c in trained]
                agg["fragmentation"] = float(np.mean(frs))

            if cfg.metric_repro and len(trained) >= 2:
                pair_scores = {}
                for i in range(len(trained)):
                    for j in range(i + 1, len(trained)):
                        r = reproducibility(trained[i]["_model"], trained[j]["_model"],
                                            triplets, cfg.resolution, jobs=cfg.jobs)
                        pair_scores[f"{trained[i]['seed']}-{trained[j]['seed']}"] = r.mean
                agg["reproducibility_pairs"] = pair_scores
                agg["reproducibility"] = float(np.mean(list(pair_scores.values())))

            if cfg.metric_margins and trained:
                med_all, med_mis = [], []
                for c in trained:
                    rep = margins(c["_model"], train_ds.inputs[all_idx],
                                  n_directions=cfg.n_margin_dirs,
                                  seed=derive_seed(cfg.master_seed, "margin-dirs", noise))
                    med_all.append(rep.median)
                    if mis_idx is not None:
                        rep_m = margins(c["_model"], train_ds.inputs[mis_idx],
                                        n_directions=cfg.n_margin_dirs,
                                        seed=derive_seed(cfg.master_seed, "margin-dirs", noise))
                        med_mis.append(rep_m.median)
                agg["margin_median_all"] = float(np.mean(med_all))
                agg["margin_median_mislabeled"] = float(np.mean(med_mis)) if med_mis else None

            aggregates.append(agg)

        threshold = None
        for agg in aggregates:
            if agg["mean_train_error"] is not None and agg["mean_train_error"] < INTERPOLATION_TRAIN_ERROR:
                threshold = agg["width"]
                break

        for c in cells:
            c.pop("_model", None)
        noise_blocks[f"{noise:g}"] = {
            "noise": noise,
            "threshold_width": threshold,
            "interpolation_rule": f"train error < {INTERPOLATION_TRAIN_ERROR} on assigned labels",
            "triplet_seed": triplet_seed,
            "triplet_mode": cfg.triplet_mode,
            "margin_point_indices": [int(i) for i in all_idx],
            "mislabeled_point_indices": [int(i) for i in mis_idx] if mis_idx is not None else None,
            "cells": cells,
            "aggregates": aggregates,
        }

    report = SweepReport(config=cfg.to_json_dict(), noise_blocks=noise_blocks,
                         csv_text=_sweep_csv(cfg, noise_blocks))
    (out_dir / "sweep_report.json").write_text(
        json.dumps(report.to_json_dict(), sort_keys=True, separators=(",", ":")))
    (out_dir / "curves.csv").write_text(report.csv_text)
    return report


_CSV_COLUMNS = ("width", "noise", "mean_train_error", "mean_test_error",
                "mean_clean_error", "mean_noisy_error", "fragmentation",
                "reproducibility", "margin_median_all", "margin_median_mislabeled")


def _sweep_csv(cfg: SweepConfig, noise_blocks: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for noise in cfg.noise_rates:
        block = noise_blocks[f"{noise:g}"]
        for agg in block["aggregates"]:
            row = [agg["width"], noise]
            for col in _CSV_COLUMNS[2:]:
                v = agg.get(col)
                row.append("" if v is None else repr(float(v)))
            writer.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# optimizer comparison


def run_optimizer_comparison(
    arch_specs: dict[str, M.ModelSpec],
    optimizer_specs: dict[str, OptimizerSpec],
    train_ds: Dataset,
    test_ds: Dataset,
    seeds: tuple[int, ...],
    epochs: int,
    batch_size: int = 128,
    triplet_mode: str = "distinct_class",
    n_triplets: int = 50,
    resolution: tuple[int, int] = (50, 50),
    master_seed: int = 0,
    jobs: int = 1,
) -> dict:
    """Mean test accuracy and pairwise-seed reproducibility per (arch, optimizer)."""
    if len(seeds) < 2:
        raise UsageError("optimizer comparison needs >= 2 seeds for reproducibility pairs")
    triplets = sample_triplets(train_ds, triplet_mode, n_triplets,
                               derive_seed(master_seed, "opt-cmp-triplets"))
    data_seed = derive_seed(master_seed, "opt-cmp-data")
    table: dict = {}
    for arch_name, spec in arch_specs.items():
        for opt_name, opt in optimizer_specs.items():
            models, accs = [], []
            diverged = []
            for seed in seeds:
                cell_spec = replace(spec, init_seed=seed)
                try:
                    model, curves = train(M.init_model(cell_spec), train_ds, opt,
                                          epochs, batch_size, data_seed=data_seed,
                                          test_dataset=test_ds)
                except TrainingError as exc:
                    diverged.append({"seed": seed, "epoch": exc.epoch})
                    continue
                models.append((seed, model))
                accs.append(1.0 - curves.test_errors[-1])
            pair_scores = {}
            for i in range(len(models)):
                for j in range(i + 1, len(models)):
                    r = reproducibility(models[i][1], models[j][1], triplets,
                                        resolution, jobs=jobs)
                    pair_scores[f"{models[i][0]}-{models[j][0]}"] = r.mean
            table[f"{arch_name}/{opt_name}"] = {
                "arch": arch_name,
                "optimizer": opt_name,
                "mean_test_accuracy": float(np.mean(accs)) if accs else None,
                "reproducibility_pairs": pair_scores,
                "mean_reproducibility": float(np.mean(list(pair_scores.values())))
                if pair_scores else None,
                "diverged": diverged,
            }
    return table


# ---------------------------------------------------------------------------
# distillation comparison


def distill_cell_inapplicable(student_spec: M.ModelSpec, teacher_spec: M.ModelSpec) -> bool:
    """The diagonal case: the student would start from the teacher itself."""
    return (student_spec.structure_key() == teacher_spec.structure_key()
            and student_spec.init_seed == teacher_spec.init_seed)


def run_distillation_comparison(
    teacher_spec: M.ModelSpec,
    student_specs: dict[str, M.ModelSpec],
    train_ds: Dataset,
    test_ds: Dataset,
    seeds: tuple[int, ...],
    opt: OptimizerSpec,
    epochs: int,
    batch_size: int = 128,
    temperature: float = 1.0,
    triplet_mode: str = "distinct_class",
    n_triplets: int = 50,
    resolution: tuple[int, int] = (50, 50),
    master_seed: int = 0,
    jobs: int = 1,
) -> dict:
    """Delta-R per (student, seed): R(distilled, teacher) - R(vanilla, teacher).

    The distilled student and its vanilla control share init_seed (= the cell
    seed). A student cell whose spec equals the teacher's, including init
    seed, is the inapplicable diagonal and reports null.
    """
    teacher, _ = train(M.init_model(teacher_spec), train_ds, opt, epochs, batch_size,
                       data_seed=derive_seed(master_seed, "teacher-data"),
                       test_dataset=test_ds)
    triplets = sample_triplets(train_ds, triplet_mode, n_triplets,
                               derive_seed(master_seed, "distill-triplets"))
    table: dict = {"teacher_id": M.model_id(teacher), "cells": {}}
    for name, template in student_specs.items():
        per_seed = []
        for seed in seeds:
            cell_spec = replace(template, init_seed=seed)
            if distill_cell_inapplicable(cell_spec, teacher_spec):
                per_seed.append({"seed": seed, "delta_r": None, "inapplicable": True})
                continue
            data_seed = derive_seed(master_seed, "distill-data", name, seed)
            student_d, _ = distill(cell_spec, teacher, train_ds, opt, epochs, batch_size,
                                   temperature=temperature, data_seed=data_seed)
            student_v, _ = train(M.init_model(cell_spec), train_ds, opt, epochs, batch_size,
                                 data_seed=data_seed)
            r_d = reproducibility(student_d, teacher, triplets, resolution, jobs=jobs).mean
            r_v = reproducibility(student_v, teacher, triplets, resolution, jobs=jobs).mean
            per_seed.append({"seed": seed, "r_distilled": r_d, "r_vanilla": r_v,
                             "delta_r": r_d - r_v, "inapplicable": False})
        applicable = [c["delta_r"] for c in per_seed if c["delta_r"] is not None]
        table["cells"][name] = {
            "per_seed": per_seed,
            "mean_delta_r": float(np.mean(applicable)) if applicable else None,
        }
    return table
