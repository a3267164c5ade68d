"""Command-line surface.

Subcommands: train | distill | datagen | plot | repro | frag | margin |
sweep | lemma. Every run writes a manifest.json into the output directory
recording the resolved config, master seed, tool version, input digests,
output paths, and wall-clock. Flags override config-file values; the config
file is flat `key = value` lines with # comments. All randomness flows from
--seed (a generated seed is used, and recorded, when omitted). Structured
logs go to stderr as JSON lines; results go to files and stdout only.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime or numeric
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import __version__
from . import models as M
from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import (AugmentFlags, Dataset, gen_synthetic, inject_label_noise,
                       load_cifar_binary, load_csv, load_idx, save_csv)
from .errors import DbatlasError, UsageError
from .experiments import SweepConfig, run_double_descent
from .lemma import softmax_head, validate_concentration
from .metrics import fragmentation, margins, reproducibility
from .optim import OptimizerSpec
from .plane import build_frame, evaluate_grid, make_grid, sample_triplets, save_labelgrid
from .render import Marker, Palette, RenderOptions, render, write_ppm
from .seeding import derive_seed
from .training import distill, train


def log(event: str, **fields) -> None:
    rec = {"event": event, **fields}
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)


def _sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, command: str, config: dict, master_seed: int, out_dir: Path):
        self.data = {
            "command": command,
            "config": config,
            "master_seed": master_seed,
            "tool_version": __version__,
            "input_digests": {},
            "output_paths": [],
            "wall_clock_seconds": None,
            "status": "incomplete",
        }
        self.out_dir = out_dir
        self._t0 = time.monotonic()

    def add_input(self, path: str | Path) -> None:
        self.data["input_digests"][str(path)] = _sha256_file(path)

    def add_output(self, path: str | Path) -> None:
        self.data["output_paths"].append(str(path))

    def write(self, status: str = "ok") -> None:
        self.data["status"] = status
        self.data["wall_clock_seconds"] = round(time.monotonic() - self._t0, 3)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "manifest.json").write_text(json.dumps(self.data, indent=1, sort_keys=True))


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat key = value lines; # starts a comment; later keys win."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _default_out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get("DBATLAS_OUT")
    return Path(env) if env else Path("dbatlas-out")


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    seed = int.from_bytes(os.urandom(8), "little") >> 1
    log("seed-generated", seed=seed)
    return seed


def _load_dataset(path: str, split: str, labels_path: str | None = None) -> Dataset:
    if path.endswith(".csv"):
        ds = load_csv(path)
    elif path.endswith(".bin"):
        ds = load_cifar_binary(path, split)
    else:
        if labels_path is None:
            raise UsageError("IDX datasets need --labels alongside the images path")
        ds = load_idx(path, labels_path, split)
    if ds.split != split:
        ds = Dataset(ds.inputs, ds.true_labels, ds.assigned_labels, ds.noise_mask, split, ds.meta)
    return ds


def _model_spec_from_args(args, ds: Dataset) -> M.ModelSpec:
    dims = ds.meta.input_shape if (args.family in ("convlite", "mixerlite")
                                   and ds.meta.input_shape) else ds.dim
    return M.ModelSpec(args.family, args.width, args.depth, dims,
                       ds.num_classes, init_seed=derive_seed(args.seed_resolved, "init"))


def _optimizer_from_args(args) -> OptimizerSpec:
    return OptimizerSpec(kind=args.optimizer, learning_rate=args.lr,
                         momentum=args.momentum, rho=args.rho)


# ---------------------------------------------------------------------------
# subcommands


def cmd_datagen(args) -> int:
    out = _default_out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed_resolved
    manifest = Manifest("datagen", vars_of(args), seed, out)
    ds = gen_synthetic(args.kind, args.n_per_class, args.classes, args.dims,
                       args.sigma, derive_seed(seed, "datagen"), split=args.split)
    if args.noise_rate > 0:
        ds = inject_label_noise(ds, args.noise_rate, derive_seed(seed, "datagen-noise"))
    path = out / args.name
    save_csv(ds, path)
    manifest.add_output(path)
    manifest.write()
    log("datagen-done", path=str(path), samples=len(ds))
    print(path)
    return 0


def cmd_train(args) -> int:
    out = _default_out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed_resolved
    manifest = Manifest("train", vars_of(args), seed, out)
    ds = _load_dataset(args.dataset, "train", args.labels)
    manifest.add_input(args.dataset)
    test_ds = _load_dataset(args.test_dataset, "test") if args.test_dataset else None
    spec = _model_spec_from_args(args, ds)
    flags = AugmentFlags(crop_pad=args.crop_pad, hflip=args.hflip)
    model, curves = train(M.init_model(spec), ds, _optimizer_from_args(args),
                          args.epochs, args.batch_size,
                          augment_flags=flags if flags.active else None,
                          mixup_alpha=args.mixup_alpha,
                          data_seed=derive_seed(seed, "data-order"),
                          test_dataset=test_ds)
    ckpt = out / args.name
    save_checkpoint(model, ckpt)
    curves_path = Path(str(ckpt) + ".curves.json")
    curves_path.write_text(json.dumps({"train_errors": curves.train_errors,
                                       "test_errors": curves.test_errors}))
    manifest.add_output(ckpt)
    manifest.add_output(curves_path)
    manifest.write()
    log("train-done", checkpoint=str(ckpt), final_train_error=curves.train_errors[-1])
    print(ckpt)
    return 0


def cmd_distill(args) -> int:
    out = _default_out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed_resolved
    manifest = Manifest("distill", vars_of(args), seed, out)
    ds = _load_dataset(args.dataset, "train", args.labels)
    manifest.add_input(args.dataset)
    teacher = load_checkpoint(args.teacher)
    manifest.add_input(args.teacher)
    spec = M.ModelSpec(args.family, args.width, args.depth,
                       teacher.spec.input_dims, teacher.spec.num_classes,
                       init_seed=derive_seed(seed, "init"))
    student, curves = distill(spec, teacher, ds, _optimizer_from_args(args),
                              args.epochs, args.batch_size, temperature=args.temperature,
                              data_seed=derive_seed(seed, "data-order"))
    ckpt = out / args.name
    save_checkpoint(student, ckpt)
    manifest.add_output(ckpt)
    manifest.write()
    print(ckpt)
    return 0


def cmd_plot(args) -> int:
    out = _default_out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed_resolved
    manifest = Manifest("plot", vars_of(args), seed, out)
    model = load_checkpoint(args.model)
    manifest.add_input(args.model)
    ds = _load_dataset(args.dataset, "train", args.labels)
    manifest.add_input(args.dataset)
    triplet = sample_triplets(ds, args.triplet_mode, 1, derive_seed(seed, "plot-triplet"))[0]
    frame = build_frame(triplet)
    grid = make_grid(frame, (args.resolution, args.resolution))
    lg = evaluate_grid(model, grid, clip=args.clip)
    (a2, b2), (a3, b3) = frame.anchor_coords()
    mislabeled = [bool(ds.noise_mask[i]) for i in triplet.indices]
    markers = (Marker(0.0, 0.0, mislabeled[0]), Marker(a2, b2, mislabeled[1]),
               Marker(a3, b3, mislabeled[2])) if args.markers else ()
    img = render(lg, Palette(), RenderOptions(markers=markers,
                                              shade_by_confidence=args.shade,
                                              upscale=args.upscale))
    ppm_path = out / f"{args.name}.ppm"
    grid_path = out / f"{args.name}.labelgrid.json"
    write_ppm(img, ppm_path)
    save_labelgrid(lg, grid_path)
    manifest.add_output(ppm_path)
    manifest.add_output(grid_path)
    manifest.write()
    log("plot-done", ppm=str(ppm_path), labelgrid=str(grid_path),
        triplet_indices=list(triplet.indices))
    print(ppm_path)
    return 0


def cmd_repro(args) -> int:
    out = _default_out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed_resolved
    manifest = Manifest("repro", vars_of(args), seed, out)
    model_a = load_checkpoint(args.model_a)
    model_b = load_checkpoint(args.model_b)
    manifest.add_input(args.model_a)
    manifest.add_input(args.model_b)
    ds = _load_dataset(args.dataset, "train", args.labels)
    manifest.add_input(args.dataset)
    triplets = sample_triplets(ds, args.triplet_mode, args.triplets,
                               derive_seed(seed, "repro-triplets"))
    report = reproducibility(model_a, model_b, triplets,
                             (args.resolution, args.resolution), jobs=args.jobs,
                             config={"seed": seed, "triplet_mode": args.triplet_mode})
    path = out / "repro_report.json"
    path.write_text(json.dumps(report.to_json_dict(), indent=1, sort_keys=True))
    manifest.add_output(path)
    manifest.write()
    print(json.dumps({"mean": report.mean, "n_triplets": report.n_triplets}))
    return 0


def cmd_frag(args) -> int:
    out = _default_out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed_resolved
    manifest = Manifest("frag", vars_of(args), seed, out)
    model = load_checkpoint(args.model)
    manifest.add_input(args.model)
    ds = _load_dataset(args.dataset, "train", args.labels)
    manifest.add_input(args.dataset)
    triplets = sample_triplets(ds, args.triplet_mode, args.triplets,
                               derive_seed(seed, "frag-triplets"))
    report = fragmentation(model, triplets, (args.resolution, args.resolution),
                           connectivity=args.connectivity, jobs=args.jobs,
                           config={"seed": seed, "triplet_mode": args.triplet_mode})
    path = out / "frag_report.json"
    path.write_text(json.dumps(report.to_json_dict(), indent=1, sort_keys=True))
    manifest.add_output(path)
    manifest.write()
    print(json.dumps({"mean": report.mean, "n_triplets": report.n_triplets}))
    return 0


def cmd_margin(args) -> int:
    out = _default_out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed_resolved
    manifest = Manifest("margin", vars_of(args), seed, out)
    model = load_checkpoint(args.model)
    manifest.add_input(args.model)
    ds = _load_dataset(args.dataset, "train", args.labels)
    manifest.add_input(args.dataset)
    rng = np.random.default_rng(derive_seed(seed, "margin-points"))
    idx = rng.choice(len(ds), size=min(args.points, len(ds)), replace=False)
    report = margins(model, ds.inputs[idx], n_directions=args.directions,
                     max_radius=args.max_radius, seed=derive_seed(seed, "margin-dirs"),
                     config={"seed": seed, "point_indices": [int(i) for i in idx]})
    path = out / "margin_report.json"
    path.write_text(json.dumps(report.to_json_dict(), indent=1, sort_keys=True))
    manifest.add_output(path)
    manifest.write()
    print(json.dumps({"median": report.median, "fraction_censored": report.fraction_censored}))
    return 0


_SWEEP_KEYS = {f.name for f in dataclass_fields(SweepConfig)}


def sweep_config_from_mapping(mapping: dict[str, str], out_dir: str, master_seed: int,
                              jobs: int) -> SweepConfig:
    kwargs: dict = {"out_dir": out_dir, "master_seed": master_seed, "jobs": jobs}
    parsers = {
        "widths": lambda v: tuple(int(x) for x in v.split(",") if x.strip()),
        "noise_rates": lambda v: tuple(float(x) for x in v.split(",") if x.strip()),
        "seeds": lambda v: tuple(int(x) for x in v.split(",") if x.strip()),
        "resolution": lambda v: tuple(int(x) for x in v.split(",") if x.strip()),
    }
    for key, raw in mapping.items():
        if key in ("out_dir", "master_seed", "jobs"):
            continue
        if key not in _SWEEP_KEYS:
            raise UsageError(f"unknown sweep config key {key!r}")
        if key in parsers:
            kwargs[key] = parsers[key](raw)
            continue
        current = SweepConfig.__dataclass_fields__[key].default
        if isinstance(current, bool):
            kwargs[key] = raw.lower() in ("1", "true", "yes", "on")
        elif isinstance(current, int):
            kwargs[key] = int(raw)
        elif isinstance(current, float):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    return SweepConfig(**kwargs)


def cmd_sweep(args) -> int:
    out = _default_out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed_resolved
    mapping = read_config_file(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        mapping[key.strip()] = value.strip()
    cfg = sweep_config_from_mapping(mapping, str(out), seed, args.jobs)
    manifest = Manifest("sweep", cfg.to_json_dict(), seed, out)
    if args.config:
        manifest.add_input(args.config)
    log("sweep-start", widths=list(cfg.widths), noise_rates=list(cfg.noise_rates),
        seeds=list(cfg.seeds))
    report = run_double_descent(cfg)
    manifest.add_output(out / "sweep_report.json")
    manifest.add_output(out / "curves.csv")
    manifest.write()
    for name, block in report.noise_blocks.items():
        log("sweep-block-done", noise=name, threshold_width=block["threshold_width"])
    print(out / "sweep_report.json")
    return 0


def cmd_lemma(args) -> int:
    out = _default_out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed_resolved
    manifest = Manifest("lemma", vars_of(args), seed, out)
    model = load_checkpoint(args.model)
    manifest.add_input(args.model)
    head = softmax_head(model, args.class_index)
    t_values = [float(t) for t in args.t.split(",")]
    check = validate_concentration(head, model.spec.flat_dim, t_values,
                                   n_samples=args.samples,
                                   seed=derive_seed(seed, "lemma"))
    path = out / "lemma_check.json"
    path.write_text(json.dumps(check.to_json_dict(), indent=1, sort_keys=True))
    manifest.add_output(path)
    manifest.write()
    print(f"{'t':>8} {'empirical':>10} {'bound':>10} {'ok':>4}")
    for t, frac, bound in zip(check.t_values, check.empirical_fracs, check.bounds_clamped):
        print(f"{t:8.4f} {frac:10.6f} {bound:10.6f} {'yes' if frac >= bound else 'NO':>4}")
    print(f"passed: {check.passed}")
    return 0


def vars_of(args) -> dict:
    skip = {"func", "seed_resolved"}
    return {k: v for k, v in vars(args).items() if k not in skip}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dbatlas",
                                     description="decision-boundary analysis toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="output directory (default $DBATLAS_OUT or ./dbatlas-out)")
        p.add_argument("--seed", type=int, help="master seed; generated and logged if omitted")
        p.add_argument("--jobs", type=int, default=1, help="worker threads for metric loops")

    def dataset_flags(p):
        p.add_argument("--dataset", required=True,
                       help="dataset path: .csv (synthetic), .bin (CIFAR binary), else IDX images")
        p.add_argument("--labels", help="IDX labels path when --dataset is IDX images")

    def train_flags(p):
        p.add_argument("--family", default="mlp", choices=("mlp", "convlite", "mixerlite"))
        p.add_argument("--width", type=int, default=16)
        p.add_argument("--depth", type=int, default=1)
        p.add_argument("--epochs", type=int, default=50)
        p.add_argument("--batch-size", type=int, default=128, dest="batch_size")
        p.add_argument("--optimizer", default="adam", choices=("sgd", "adam", "sam_sgd"))
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--momentum", type=float, default=0.9)
        p.add_argument("--rho", type=float, default=0.01)

    p = sub.add_parser("datagen", help="generate a synthetic dataset CSV")
    common(p)
    p.add_argument("--kind", default="blobs", choices=("blobs", "rings"))
    p.add_argument("--n-per-class", type=int, default=100, dest="n_per_class")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dims", type=int, default=16)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--noise-rate", type=float, default=0.0, dest="noise_rate")
    p.add_argument("--split", default="train", choices=("train", "test"))
    p.add_argument("--name", default="dataset.csv")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train a classifier, write a checkpoint")
    common(p)
    dataset_flags(p)
    train_flags(p)
    p.add_argument("--test-dataset", dest="test_dataset")
    p.add_argument("--crop-pad", type=int, default=0, dest="crop_pad")
    p.add_argument("--hflip", action="store_true")
    p.add_argument("--mixup-alpha", type=float, default=None, dest="mixup_alpha")
    p.add_argument("--name", default="model.ckpt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", help="train a student on a teacher's soft outputs")
    common(p)
    dataset_flags(p)
    train_flags(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--name", default="student.ckpt")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("plot", help="render one triplet plane to PPM + label grid JSON")
    common(p)
    dataset_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--triplet-mode", default="distinct_class", dest="triplet_mode",
                   choices=("distinct_class", "same_class", "with_mislabeled", "off_manifold"))
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--clip", action="store_true", help="clip grid points into [0,1]^n")
    p.add_argument("--shade", action="store_true", help="shade by confidence")
    p.add_argument("--markers", action="store_true", help="draw anchor markers")
    p.add_argument("--upscale", type=int, default=1)
    p.add_argument("--name", default="plane")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("repro", help="reproducibility score between two checkpoints")
    common(p)
    dataset_flags(p)
    p.add_argument("--model-a", required=True, dest="model_a")
    p.add_argument("--model-b", required=True, dest="model_b")
    p.add_argument("--triplets", type=int, default=100)
    p.add_argument("--triplet-mode", default="distinct_class", dest="triplet_mode")
    p.add_argument("--resolution", type=int, default=50)
    p.set_defaults(func=cmd_repro)

    p = sub.add_parser("frag", help="fragmentation score of a checkpoint")
    common(p)
    dataset_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--triplets", type=int, default=100)
    p.add_argument("--triplet-mode", default="distinct_class", dest="triplet_mode")
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--connectivity", type=int, default=4, choices=(4, 8))
    p.set_defaults(func=cmd_frag)

    p = sub.add_parser("margin", help="margin distribution of a checkpoint")
    common(p)
    dataset_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--directions", type=int, default=10)
    p.add_argument("--max-radius", type=float, default=None, dest="max_radius")
    p.set_defaults(func=cmd_margin)

    p = sub.add_parser("sweep", help="double-descent width sweep")
    common(p)
    p.add_argument("--config", help="flat key = value sweep config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a sweep config key (repeatable; wins over --config)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("lemma", help="concentration-bound check of a checkpoint head")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--class-index", type=int, default=0, dest="class_index")
    p.add_argument("--t", default="0.05,0.1,0.2", help="comma-separated deviation thresholds")
    p.add_argument("--samples", type=int, default=10000)
    p.set_defaults(func=cmd_lemma)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.seed_resolved = _resolve_seed(args)
        log("run-start", command=args.command, seed=args.seed_resolved, version=__version__)
        return args.func(args)
    except (UsageError,) as exc:
        log("usage-error", message=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DbatlasError as exc:
        log("runtime-error", message=str(exc), kind=type(exc).__name__)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
