"""End-to-end orchestration: baseline, filtering, VAE augmentation, SSL, iteration.

Each run seed owns a directory tree (the root for single-seed runs, seed_<i>/
subdirectories otherwise) holding splits, checkpoints, filter reports,
augmented data, training histories and a consolidated report. Iteration 1
uses the canonical artifact names; later iterations suffix them with _iter<k>.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .confidence import filter_low_confidence, plot_confidence_histogram
from .datasets import (
    LabeledSet,
    concat_labeled,
    generate_toy_dataset,
    load_benchmark,
    save_labeled_npz,
    split_dataset,
)
from .errors import InvalidSpecError, StageError
from .models import load_classifier, save_checkpoint
from .mixmatch import train_mixmatch
from .seeding import derive_seed
from .supervised import evaluate, train_supervised
from .vae_augment import (
    assemble_vae_train_set,
    export_augmented,
    generate_reconstructions,
    generate_synthetic,
    pretrain_encoder,
    save_comparison_grid,
    save_sample_grid,
    train_vae,
)
from . import storage

log = logging.getLogger(__name__)


@dataclass
class PipelineData:
    train_pool: LabeledSet
    test_set: LabeledSet


@dataclass
class PipelineState:
    """Mutable per-seed pipeline progress; artifact fields hold paths."""

    run_dir: Path
    run_seed: int
    data: PipelineData
    d_l: LabeledSet
    d_v: LabeledSet
    d_ref: LabeledSet
    iteration: int = 0
    reference_ckpt: str = ""
    encoder_ckpt: str | None = None
    filter_reports: list = field(default_factory=list)
    augmented_dirs: list = field(default_factory=list)
    metrics: list = field(default_factory=list)


def prepare_data(config: PipelineConfig) -> PipelineData:
    ds = config.raw["dataset"]
    if ds["name"] == "toy":
        train_pool = generate_toy_dataset(ds["num_classes"], ds["per_class"], ds["image_size"],
                                          seed=ds["data_seed"])
        test_set = generate_toy_dataset(ds["num_classes"], ds["test_per_class"], ds["image_size"],
                                        seed=derive_seed(ds["data_seed"], "test-pool"))
        return PipelineData(train_pool, test_set)
    if ds["root"] is None:
        raise InvalidSpecError(f"dataset.root is required for benchmark {ds['name']}")
    return PipelineData(
        load_benchmark(ds["name"], ds["root"], split="train"),
        load_benchmark(ds["name"], ds["root"], split="test"),
    )


def _aux_toy_dataset(config: PipelineConfig) -> LabeledSet:
    ds = config.raw["dataset"]
    return generate_toy_dataset(ds["num_classes"], ds["per_class"], ds["image_size"],
                                seed=derive_seed(ds["data_seed"], "aux-pool"))


def _iter_suffix(iteration: int) -> str:
    return "" if iteration == 1 else f"_iter{iteration}"


def _write_splits(state: PipelineState) -> None:
    splits = state.run_dir / "splits"
    for name, part in (("d_l", state.d_l), ("d_v", state.d_v), ("d_ref", state.d_ref),
                       ("test", state.data.test_set)):
        save_labeled_npz(part, splits / f"{name}.npz")
    storage.write_json(splits / "manifest.json", {
        "schema_version": storage.SCHEMA_VERSION,
        "sizes": {"d_l": len(state.d_l), "d_v": len(state.d_v), "d_ref": len(state.d_ref),
                  "test": len(state.data.test_set)},
        "ids": {"d_l": state.d_l.ids.tolist(), "d_v": state.d_v.ids.tolist(),
                "d_ref": state.d_ref.ids.tolist()},
    })


def init_state(config: PipelineConfig, run_seed: int, run_dir) -> PipelineState:
    data = prepare_data(config)
    d_l, d_v, d_ref = split_dataset(data.train_pool, config.split_spec(derive_seed(run_seed, "split")))
    state = PipelineState(Path(run_dir), run_seed, data, d_l, d_v, d_ref)
    _write_splits(state)
    return state


def _record(state: PipelineState, stage: str, model) -> dict:
    test_acc, test_loss = evaluate(model, state.data.test_set)
    val_acc, val_loss = evaluate(model, state.d_v)
    entry = {
        "stage": stage,
        "test_accuracy": test_acc,
        "test_loss": test_loss,
        "val_accuracy": val_acc,
        "val_loss": val_loss,
    }
    state.metrics.append(entry)
    return entry


def train_baseline(state: PipelineState, config: PipelineConfig) -> None:
    spec = config.classifier_spec(state.d_l.num_classes, state.d_l.images.shape[1:])
    try:
        model, history = train_supervised(
            state.d_l, state.d_v, spec, config.train_config(derive_seed(state.run_seed, "supervised"))
        )
    except Exception as exc:
        raise StageError("supervised", exc) from exc
    ckpt = state.run_dir / "checkpoints" / "baseline.npz"
    save_checkpoint(model, ckpt, training_step=history.records[-1]["step"])
    storage.write_jsonl(state.run_dir / "history" / "supervised.jsonl", history.to_records())
    state.reference_ckpt = str(ckpt)
    _record(state, "baseline", model)
    _write_state(state)


def ensure_encoder(state: PipelineState, config: PipelineConfig) -> str | None:
    """Resolve the VAE encoder initialization: 'auto' pretrains on an auxiliary toy set."""
    mode = config.raw["vae"]["pretrained_encoder"]
    if mode is None:
        return None
    if mode != "auto":
        return str(mode)
    if state.encoder_ckpt:
        return state.encoder_ckpt
    if config.raw["dataset"]["name"] != "toy":
        raise InvalidSpecError("vae.pretrained_encoder='auto' requires the toy dataset; "
                               "point it at an encoder checkpoint for benchmarks")
    aux = _aux_toy_dataset(config)
    spec = config.classifier_spec(aux.num_classes, aux.images.shape[1:])
    path = state.run_dir / "checkpoints" / "encoder.npz"
    try:
        pretrain_encoder(aux, spec, config.pretrain_config(derive_seed(state.run_seed, "pretrain")), path)
    except Exception as exc:
        raise StageError("pretrain-encoder", exc) from exc
    state.encoder_ckpt = str(path)
    return state.encoder_ckpt


def run_iteration(state: PipelineState, config: PipelineConfig) -> PipelineState:
    """One refinement iteration: filter -> VAE -> generate -> SSL -> evaluate."""
    it = state.iteration + 1
    suffix = _iter_suffix(it)
    spec = config.classifier_spec(state.d_l.num_classes, state.d_l.images.shape[1:])
    reference = load_classifier(state.reference_ckpt)

    if config.ablation_mode == "raw-ref":
        labeled, unlabeled = state.d_l, state.d_ref.drop_labels()
    else:
        try:
            d_low, report = filter_low_confidence(reference, state.d_ref, mode=config.confidence_mode)
            report_path = state.run_dir / f"filter_report{suffix}.json"
            storage.write_json(report_path, report.to_dict())
            plot_confidence_histogram(report, state.run_dir / f"confidence_hist{suffix}.png")
            state.filter_reports.append(str(report_path))
        except StageError:
            raise
        except Exception as exc:
            raise StageError("filter", exc) from exc

        try:
            pad = config.raw["vae"]["pad_count"]
            pad = len(d_low) if pad is None else int(pad)
            vae_set = assemble_vae_train_set(d_low, state.d_l, pad, derive_seed(state.run_seed, "pad", it))
            vae = train_vae(vae_set, config.vae_config(derive_seed(state.run_seed, "vae", it),
                                                       ensure_encoder(state, config)))
            save_checkpoint(vae, state.run_dir / "checkpoints" / f"vae_iter{it}.npz")
        except StageError:
            raise
        except Exception as exc:
            raise StageError("train-vae", exc) from exc

        try:
            id_start = int(state.data.train_pool.ids.max()) + 1
            d_rec = generate_reconstructions(vae, d_low, id_start=id_start)
            d_synth = generate_synthetic(vae, config.k_synth, derive_seed(state.run_seed, "synth", it))
            aug_dir = state.run_dir / ("augmented" + suffix)
            export_augmented(d_rec, d_low.ids, d_synth, aug_dir / "rec", aug_dir / "synth")
            save_labeled_npz(d_rec, aug_dir / "rec" / "data.npz")
            storage.save_npz(aug_dir / "synth" / "data.npz",
                             {"images": d_synth.images, "ids": d_synth.ids})
            save_comparison_grid(d_low.images, d_rec.images,
                                 state.run_dir / "grids" / f"seed_vs_rec{suffix}.png")
            if len(d_synth):
                save_sample_grid(d_synth.images[:32], state.run_dir / "grids" / f"synth{suffix}.png")
            state.augmented_dirs.append(str(aug_dir))
        except StageError:
            raise
        except Exception as exc:
            raise StageError("generate", exc) from exc
        labeled, unlabeled = concat_labeled(state.d_l, d_rec), d_synth

    try:
        model, history = train_mixmatch(
            labeled, unlabeled, state.d_v, spec,
            config.mixmatch_config(derive_seed(state.run_seed, "mixmatch", it)),
        )
    except StageError:
        raise
    except Exception as exc:
        raise StageError("train-mixmatch", exc) from exc
    ckpt = state.run_dir / "checkpoints" / f"mixmatch_iter{it}.npz"
    save_checkpoint(model, ckpt, training_step=history.records[-1]["step"])
    storage.write_jsonl(state.run_dir / "history" / f"mixmatch_iter{it}.jsonl", history.to_records())
    _record(state, f"mixmatch_iter{it}", model)

    state.iteration = it
    state.reference_ckpt = str(ckpt)
    _write_state(state)
    return state


def _write_state(state: PipelineState) -> None:
    storage.write_json(state.run_dir / "state.json", {
        "schema_version": storage.SCHEMA_VERSION,
        "iteration": state.iteration,
        "reference_ckpt": str(Path(state.reference_ckpt).name),
        "encoder_ckpt": Path(state.encoder_ckpt).name if state.encoder_ckpt else None,
        "metrics": state.metrics,
    })


def run_seeds(config: PipelineConfig):
    """Yields (run_seed, run_dir suffix) pairs for the configured seed count."""
    for i in range(config.num_seeds):
        seed = config.seed if i == 0 else derive_seed(config.seed, "run", i)
        yield i, seed


def _seed_dir(root: Path, config: PipelineConfig, index: int) -> Path:
    return root if config.num_seeds == 1 else root / f"seed_{index}"


def _aggregate(per_seed_metrics: list) -> list:
    stages = [m["stage"] for m in per_seed_metrics[0]]
    out = []
    for si, stage in enumerate(stages):
        accs = np.array([metrics[si]["test_accuracy"] for metrics in per_seed_metrics])
        out.append({
            "stage": stage,
            "test_accuracy_mean": float(accs.mean()),
            "test_accuracy_std": float(accs.std()),
            "test_accuracy_range": float(accs.max() - accs.min()),
            "per_seed": [float(a) for a in accs],
        })
    return out


def run_pipeline(config: PipelineConfig, run_dir) -> dict:
    """Full pipeline across seeds and iterations; returns the consolidated report."""
    root = Path(run_dir)
    root.mkdir(parents=True, exist_ok=True)
    storage.write_json(root / "config.json", config.raw)
    per_seed = []
    seeds_used = []
    for index, seed in run_seeds(config):
        sdir = _seed_dir(root, config, index)
        state = init_state(config, seed, sdir)
        train_baseline(state, config)
        for _ in range(config.num_iterations):
            state = run_iteration(state, config)
        per_seed.append(state.metrics)
        seeds_used.append(seed)
        log.info("seed %d done: %s", seed,
                 ", ".join(f"{m['stage']}={m['test_accuracy']:.3f}" for m in state.metrics))
    report = {
        "schema_version": storage.SCHEMA_VERSION,
        "kind": "pipeline",
        "seeds": seeds_used,
        "stages": _aggregate(per_seed),
        "per_seed_metrics": per_seed,
    }
    storage.write_json(root / "report.json", report)
    return report


def run_ablation(config: PipelineConfig, run_dir) -> dict:
    """Raw-D_REF arm vs generated-data arm from the same baseline and splits."""
    root = Path(run_dir)
    root.mkdir(parents=True, exist_ok=True)
    storage.write_json(root / "config.json", config.raw)
    arms = {"raw-ref": [], "generated": []}
    checksums = {"raw-ref": [], "generated": []}
    seeds_used = []
    for index, seed in run_seeds(config):
        sdir = _seed_dir(root, config, index)
        state = init_state(config, seed, sdir)
        train_baseline(state, config)
        baseline_sum = storage.sha256_file(state.reference_ckpt)
        splits_sum = storage.dir_checksum(state.run_dir / "splits")
        spec = config.classifier_spec(state.d_l.num_classes, state.d_l.images.shape[1:])

        # arm (a): raw reference samples as unlabeled data
        try:
            model_raw, hist_raw = train_mixmatch(
                state.d_l, state.d_ref.drop_labels(), state.d_v, spec,
                config.mixmatch_config(derive_seed(seed, "mixmatch-raw")),
            )
        except Exception as exc:
            raise StageError("ablation-raw", exc) from exc
        save_checkpoint(model_raw, state.run_dir / "checkpoints" / "mixmatch_raw.npz")
        storage.write_jsonl(state.run_dir / "history" / "mixmatch_raw.jsonl", hist_raw.to_records())
        raw_entry = _record(state, "ablation_raw_ref", model_raw)
        arms["raw-ref"].append(raw_entry["test_accuracy"])
        checksums["raw-ref"].append({"baseline": baseline_sum, "splits": splits_sum})

        # arm (b): the generated route, identical to pipeline iteration 1
        generated_config = PipelineConfig.from_dict({**config.raw, "ablation_mode": "generated"})
        state = run_iteration(state, generated_config)
        gen_entry = state.metrics[-1]
        arms["generated"].append(gen_entry["test_accuracy"])
        checksums["generated"].append({"baseline": baseline_sum, "splits": splits_sum})
        seeds_used.append(seed)

    def stats(values):
        arr = np.array(values)
        return {
            "test_accuracy_mean": float(arr.mean()),
            "test_accuracy_std": float(arr.std()),
            "test_accuracy_range": float(arr.max() - arr.min()),
            "per_seed": [float(v) for v in arr],
        }

    report = {
        "schema_version": storage.SCHEMA_VERSION,
        "kind": "ablation",
        "seeds": seeds_used,
        "arms": {name: stats(vals) for name, vals in arms.items()},
        "checksums": checksums,
    }
    storage.write_json(root / "report.json", report)
    return report
