"""Command-line entry points for the pipeline stages and reports.

Stage subcommands (split, train-supervised, filter, train-vae, generate,
train-mixmatch) operate on a single-seed run directory and check that their
input artifacts exist; `run` and `ablation` drive everything. All randomness
derives from the one --seed value.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig, apply_overrides, load_config_file
from .confidence import FilterReport, filter_low_confidence, plot_confidence_histogram
from .datasets import concat_labeled, load_labeled_npz, UnlabeledSet
from .errors import CgsslError, MissingArtifactError
from .models import load_classifier, load_vae, save_checkpoint
from .mixmatch import mixmatch_batch, train_mixmatch
from .pipeline import (
    ensure_encoder,
    init_state,
    prepare_data,
    run_ablation,
    run_pipeline,
    train_baseline,
)
from .seeding import derive_seed
from .supervised import evaluate, one_hot, train_supervised
from .vae_augment import (
    assemble_vae_train_set,
    export_augmented,
    generate_reconstructions,
    generate_synthetic,
    save_comparison_grid,
    save_sample_grid,
    train_vae,
)
from . import storage

log = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgssl",
                                     description="confidence-guided VAE augmentation for SSL")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = ["split", "train-supervised", "filter", "train-vae", "generate",
                "train-mixmatch", "run", "ablation", "report", "grid"]
    for name in commands:
        p = sub.add_parser(name)
        p.add_argument("--config", default="toy.json",
                       help="config file path or bundled name (default: toy.json)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--run-dir", default=None,
                       help="run directory (default: config, then $CGSSL_RUN_DIR)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted-key config override, repeatable")
        if name == "train-mixmatch":
            p.add_argument("--trace", action="store_true",
                           help="dump one fully worked batch transform as JSON")
    return parser


def _load_config(args) -> PipelineConfig:
    cfg = load_config_file(args.config)
    cfg = apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return PipelineConfig.from_dict(cfg)


def _run_dir(args, config: PipelineConfig) -> Path:
    target = args.run_dir or config.raw["run_dir"] or storage.default_run_dir()
    return Path(target)


def _persist_config(run_dir: Path, config: PipelineConfig) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    storage.write_json(run_dir / "config.json", config.raw)


def _require_single_seed(config: PipelineConfig, command: str) -> None:
    if config.num_seeds != 1:
        raise CgsslError(f"`{command}` operates on a single-seed run directory; "
                         f"set num_seeds=1 (got {config.num_seeds})")


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing {what}: {path} (run the producing stage first)")
    return path


def _load_splits(run_dir: Path):
    splits = _require(run_dir / "splits", "splits directory")
    return tuple(load_labeled_npz(_require(splits / f"{n}.npz", f"split {n}"))
                 for n in ("d_l", "d_v", "d_ref", "test"))


def cmd_split(args) -> int:
    config = _load_config(args)
    _require_single_seed(config, "split")
    run_dir = _run_dir(args, config)
    _persist_config(run_dir, config)
    state = init_state(config, config.seed, run_dir)
    print(f"split written to {run_dir / 'splits'}: "
          f"|D_L|={len(state.d_l)} |D_V|={len(state.d_v)} |D_REF|={len(state.d_ref)}")
    return 0


def cmd_train_supervised(args) -> int:
    config = _load_config(args)
    _require_single_seed(config, "train-supervised")
    run_dir = _run_dir(args, config)
    _persist_config(run_dir, config)
    from .pipeline import PipelineState, PipelineData

    d_l, d_v, d_ref, test = _load_splits(run_dir)
    data = prepare_data(config)
    state = PipelineState(run_dir, config.seed, PipelineData(data.train_pool, test), d_l, d_v, d_ref)
    train_baseline(state, config)
    entry = state.metrics[-1]
    print(f"baseline: val acc {entry['val_accuracy']:.4f}, test acc {entry['test_accuracy']:.4f}")
    return 0


def cmd_filter(args) -> int:
    config = _load_config(args)
    _require_single_seed(config, "filter")
    run_dir = _run_dir(args, config)
    _persist_config(run_dir, config)
    d_l, d_v, d_ref, _ = _load_splits(run_dir)
    ckpt = _require(run_dir / "checkpoints" / "baseline.npz", "baseline checkpoint")
    model = load_classifier(ckpt)
    d_low, report = filter_low_confidence(model, d_ref, mode=config.confidence_mode)
    storage.write_json(run_dir / "filter_report.json", report.to_dict())
    plot_confidence_histogram(report, run_dir / "confidence_hist.png")
    print(f"gamma={report.gamma:.6f}, selected {len(d_low)}/{len(d_ref)} samples"
          + (" (fallback)" if report.fallback_used else ""))
    return 0


def _load_filter_selection(run_dir: Path, d_ref):
    report = FilterReport.from_dict(storage.read_json(
        _require(run_dir / "filter_report.json", "filter report")))
    id_to_index = {int(v): i for i, v in enumerate(d_ref.ids)}
    idx = [id_to_index[int(i)] for i in report.selected_ids]
    return d_ref.take(np.array(sorted(idx), dtype=int)), report


def cmd_train_vae(args) -> int:
    config = _load_config(args)
    _require_single_seed(config, "train-vae")
    run_dir = _run_dir(args, config)
    _persist_config(run_dir, config)
    from .pipeline import PipelineState, PipelineData

    d_l, d_v, d_ref, test = _load_splits(run_dir)
    d_low, _ = _load_filter_selection(run_dir, d_ref)
    data = prepare_data(config)
    state = PipelineState(run_dir, config.seed, PipelineData(data.train_pool, test), d_l, d_v, d_ref)
    pad = config.raw["vae"]["pad_count"]
    pad = len(d_low) if pad is None else int(pad)
    vae_set = assemble_vae_train_set(d_low, d_l, pad, derive_seed(config.seed, "pad", 1))
    vae = train_vae(vae_set, config.vae_config(derive_seed(config.seed, "vae", 1),
                                               ensure_encoder(state, config)))
    save_checkpoint(vae, run_dir / "checkpoints" / "vae_iter1.npz")
    print(f"VAE trained on {len(vae_set)} samples "
          f"({len(d_low)} low-confidence + {pad} padded); checkpoint saved")
    return 0


def cmd_generate(args) -> int:
    config = _load_config(args)
    _require_single_seed(config, "generate")
    run_dir = _run_dir(args, config)
    _persist_config(run_dir, config)
    d_l, d_v, d_ref, _ = _load_splits(run_dir)
    d_low, _ = _load_filter_selection(run_dir, d_ref)
    vae = load_vae(_require(run_dir / "checkpoints" / "vae_iter1.npz", "VAE checkpoint"))
    data = prepare_data(config)
    id_start = int(data.train_pool.ids.max()) + 1
    d_rec = generate_reconstructions(vae, d_low, id_start=id_start)
    d_synth = generate_synthetic(vae, config.k_synth, derive_seed(config.seed, "synth", 1))
    aug = run_dir / "augmented"
    export_augmented(d_rec, d_low.ids, d_synth, aug / "rec", aug / "synth")
    from .datasets import save_labeled_npz

    save_labeled_npz(d_rec, aug / "rec" / "data.npz")
    storage.save_npz(aug / "synth" / "data.npz", {"images": d_synth.images, "ids": d_synth.ids})
    print(f"generated |D_Rec|={len(d_rec)} and |D_Synth|={len(d_synth)} under {aug}")
    return 0


def cmd_train_mixmatch(args) -> int:
    config = _load_config(args)
    _require_single_seed(config, "train-mixmatch")
    run_dir = _run_dir(args, config)
    _persist_config(run_dir, config)
    d_l, d_v, d_ref, test = _load_splits(run_dir)
    aug = run_dir / "augmented"
    d_rec = load_labeled_npz(_require(aug / "rec" / "data.npz", "reconstruction set"))
    synth_arrays = storage.load_npz(_require(aug / "synth" / "data.npz", "synthetic set"))
    d_synth = UnlabeledSet(synth_arrays["images"], synth_arrays["ids"])
    spec = config.classifier_spec(d_l.num_classes, d_l.images.shape[1:])
    mm_config = config.mixmatch_config(derive_seed(config.seed, "mixmatch", 1))
    labeled = concat_labeled(d_l, d_rec)

    if args.trace:
        model = load_classifier(_require(run_dir / "checkpoints" / "baseline.npz",
                                         "baseline checkpoint"))
        n = min(mm_config.batch_size, len(labeled), len(d_synth))
        x = labeled.images[:n]
        y = one_hot(labeled.labels[:n], labeled.num_classes)
        x_prime, u_prime, trace = mixmatch_batch(
            model, (x, y), d_synth.images[:n], mm_config,
            derive_seed(config.seed, "trace"), return_trace=True)
        storage.write_json(run_dir / "mixmatch_trace.json", {
            "schema_version": storage.SCHEMA_VERSION,
            "labeled_inputs": x.tolist(),
            "unlabeled_inputs": d_synth.images[:n].tolist(),
            **trace,
        })
        print(f"trace written to {run_dir / 'mixmatch_trace.json'}")

    model, history = train_mixmatch(labeled, d_synth, d_v, spec, mm_config)
    save_checkpoint(model, run_dir / "checkpoints" / "mixmatch_iter1.npz",
                    training_step=history.records[-1]["step"])
    storage.write_jsonl(run_dir / "history" / "mixmatch_iter1.jsonl", history.to_records())
    acc, _ = evaluate(model, test)
    print(f"mixmatch: best val acc {history.best_val_acc():.4f}, test acc {acc:.4f}")
    return 0


def cmd_run(args) -> int:
    config = _load_config(args)
    run_dir = _run_dir(args, config)
    _persist_config(run_dir, config)
    report = run_pipeline(config, run_dir)
    _print_report(report)
    return 0


def cmd_ablation(args) -> int:
    config = _load_config(args)
    run_dir = _run_dir(args, config)
    _persist_config(run_dir, config)
    report = run_ablation(config, run_dir)
    _print_report(report)
    return 0


def _print_report(report: dict) -> None:
    if report["kind"] == "ablation":
        print(f"{'arm':<24}{'mean':>8}{'std':>8}{'range':>8}  per-seed")
        for name, s in report["arms"].items():
            per = ", ".join(f"{v:.4f}" for v in s["per_seed"])
            print(f"{name:<24}{s['test_accuracy_mean']:>8.4f}{s['test_accuracy_std']:>8.4f}"
                  f"{s['test_accuracy_range']:>8.4f}  [{per}]")
        return
    print(f"{'stage':<24}{'mean':>8}{'std':>8}{'range':>8}  per-seed")
    for s in report["stages"]:
        per = ", ".join(f"{v:.4f}" for v in s["per_seed"])
        print(f"{s['stage']:<24}{s['test_accuracy_mean']:>8.4f}{s['test_accuracy_std']:>8.4f}"
              f"{s['test_accuracy_range']:>8.4f}  [{per}]")


def cmd_report(args) -> int:
    config = _load_config(args)
    run_dir = _run_dir(args, config)
    report = storage.read_json(_require(run_dir / "report.json", "report"))
    _print_report(report)
    return 0


def cmd_grid(args) -> int:
    config = _load_config(args)
    run_dir = _run_dir(args, config)
    _require_single_seed(config, "grid")
    d_l, d_v, d_ref, _ = _load_splits(run_dir)
    aug = run_dir / "augmented"
    d_rec = load_labeled_npz(_require(aug / "rec" / "data.npz", "reconstruction set"))
    d_low, _ = _load_filter_selection(run_dir, d_ref)
    save_comparison_grid(d_low.images, d_rec.images, run_dir / "grids" / "seed_vs_rec.png")
    synth_arrays = storage.load_npz(_require(aug / "synth" / "data.npz", "synthetic set"))
    if synth_arrays["images"].shape[0]:
        save_sample_grid(synth_arrays["images"][:32], run_dir / "grids" / "synth.png")
    print(f"grids written under {run_dir / 'grids'}")
    return 0


_HANDLERS = {
    "split": cmd_split,
    "train-supervised": cmd_train_supervised,
    "filter": cmd_filter,
    "train-vae": cmd_train_vae,
    "generate": cmd_generate,
    "train-mixmatch": cmd_train_mixmatch,
    "run": cmd_run,
    "ablation": cmd_ablation,
    "report": cmd_report,
    "grid": cmd_grid,
}


def cli_main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except CgsslError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
