"""Command-line entry point.

Subcommands: gen-synth, gen-knowledge, make-splits, train, eval, rank.
Configuration comes from a single JSON file with dotted keys; command-line
flags override config values. Logs go to stderr; machine-readable results
go to files; only ``rank`` prints its table to stdout. Exit codes: 0
success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .backends import BackendError, make_backends
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .configs import config_from_profile
from .dataset import (
    DatasetError,
    load_dataset,
    read_split,
    write_split,
)
from .knowledge import (
    DescriptionBank,
    KnowledgeCache,
    KnowledgeError,
    OBJECT_KINDS,
    TASK_KINDS,
    augment_templates,
    default_templates,
    ensure_descriptions,
    load_templates,
    save_templates,
)
from .metrics import (
    MetricsError,
    ModelScorer,
    OracleScorer,
    ScoredGrasp,
    evaluate,
    rank_and_decide,
)
from .pipeline import FeaturePipeline, TrainSample, derive_seed, score_samples
from .synthgen import (
    SynthesisError,
    default_spec,
    generate_dataset,
    load_corpus,
    overlap_spec,
    spec_from_json,
    spec_to_json,
)
from .training import TrainConfig, TrainingDiverged, fit, make_folds

logger = logging.getLogger("togkit")

USAGE_ERROR, DATA_ERROR, NUMERICAL_ERROR = 1, 2, 3
_DATA_ERRORS = (
    DatasetError,
    BackendError,
    KnowledgeError,
    CheckpointError,
    MetricsError,
    SynthesisError,
    FileNotFoundError,
    json.JSONDecodeError,
)


def load_config(path: str | None) -> dict:
    """Read a dotted-key JSON config file ({} when no path is given)."""
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise click.UsageError("config file must hold a JSON object")
    return doc


def resolve(config: dict, key: str, flag_value, default):
    """Flag beats config beats default."""
    if flag_value is not None:
        return flag_value
    if key in config:
        return config[key]
    return default


def write_run_manifest(out_dir: Path, command: str, params: dict, backend_ids: dict) -> Path:
    """Record the fully resolved run before any work starts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "params": params,
        "backends": backend_ids,
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    path = out_dir / "run_manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


@click.group()
def cli() -> None:
    """Task-oriented grasp evaluation toolkit."""


@cli.command("gen-synth")
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Synthetic spec JSON; omit to use a preset.")
@click.option("--preset", type=click.Choice(["default", "overlap"]), default="default",
              show_default=True, help="Built-in spec when --spec is not given.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="Override the spec seed.")
def gen_synth(spec_path, preset, out_dir, seed) -> None:
    """Generate the procedural synthetic dataset and its description corpus."""
    if spec_path is not None:
        spec = spec_from_json(json.loads(Path(spec_path).read_text(encoding="utf-8")))
    else:
        spec = default_spec() if preset == "default" else overlap_spec()
    if seed is not None:
        import dataclasses

        spec = dataclasses.replace(spec, seed=seed)
    out = Path(out_dir)
    write_run_manifest(out, "gen-synth", {"spec": spec_to_json(spec)}, {})
    index, _ = generate_dataset(spec, out)
    logger.info(
        "wrote %d instances (%d classes, %d tasks) to %s",
        len(index.instances), len(index.classes), len(index.tasks), out,
    )


@cli.command("gen-knowledge")
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--n-augment", type=int, default=None, help="Samples per prompt.")
def gen_knowledge(data_dir, config_path, n_augment) -> None:
    """Populate the description bank and instruction templates for a dataset."""
    config = load_config(config_path)
    n_aug = int(resolve(config, "knowledge.n_augment", n_augment, 2))
    root = Path(data_dir)
    index = load_dataset(root)
    backends = make_backends(config, corpus=load_corpus(root))
    write_run_manifest(root / "knowledge", "gen-knowledge",
                       {"data": str(root), "n_augment": n_aug}, backends.ids())
    cache = KnowledgeCache(root / "knowledge" / "cache")
    bank = DescriptionBank()
    ensure_descriptions(index.classes, OBJECT_KINDS, backends.generative, n_aug, bank, cache=cache)
    ensure_descriptions(index.tasks, TASK_KINDS, backends.generative, n_aug, bank, cache=cache)
    bank.save(root)
    templates = augment_templates(default_templates(), backends.generative)
    save_templates(templates, root)
    logger.info(
        "knowledge bank written for %d classes and %d tasks (%d templates)",
        len(index.classes), len(index.tasks), len(templates.templates),
    )


@cli.command("make-splits")
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--setting", type=click.Choice(["instance", "class", "task"]), required=True)
@click.option("--folds", type=int, default=4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def make_splits(data_dir, setting, folds, seed) -> None:
    """Write K-fold held-out split files for one setting."""
    root = Path(data_dir)
    index = load_dataset(root)
    write_run_manifest(root / "splits", "make-splits",
                       {"setting": setting, "folds": folds, "seed": seed}, {})
    for split in make_folds(index, setting, k=folds, seed=seed):
        path = write_split(root, split)
        logger.info("wrote %s (%d train / %d test)", path, len(split.train_ids), len(split.test_ids))


def _load_bank(root: Path, index, backends, n_aug: int) -> DescriptionBank:
    bank = DescriptionBank.load(root)
    missing = [c for c in index.classes if not bank.has_target(c, OBJECT_KINDS)]
    missing += [t for t in index.tasks if not bank.has_target(t, TASK_KINDS)]
    if missing:
        logger.warning("knowledge bank missing %d targets; generating on the fly", len(missing))
        ensure_descriptions(
            [m for m in missing if m in index.classes], OBJECT_KINDS,
            backends.generative, n_aug, bank,
        )
        ensure_descriptions(
            [m for m in missing if m in index.tasks], TASK_KINDS,
            backends.generative, n_aug, bank,
        )
    return bank


@cli.command("train")
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--setting", type=click.Choice(["instance", "class", "task"]), required=True)
@click.option("--fold", type=int, required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--weight-decay", type=float, default=None)
@click.option("--lr-decay", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--mode", type=click.Choice(["full", "semantic-only", "geometric-only", "vanilla", "concat-fusion"]), default=None)
@click.option("--profile", type=click.Choice(["default", "desk", "minimal"]), default=None)
@click.option("--points", type=int, default=None, help="Points per cloud after downsampling.")
def train_cmd(data_dir, config_path, setting, fold, out_dir, epochs, batch_size,
              learning_rate, weight_decay, lr_decay, seed, mode, profile, points) -> None:
    """Train the evaluator on one held-out fold."""
    config = load_config(config_path)
    root = Path(data_dir)
    out = Path(out_dir)
    index = load_dataset(root)
    split = read_split(root, setting, fold)
    profile_name = str(resolve(config, "model.profile", profile, "desk"))
    mode_name = str(resolve(config, "train.mode", mode, "full"))
    fusion = "concat" if mode_name == "concat-fusion" else str(resolve(config, "model.fusion", None, "cross-attention"))
    model_cfg = config_from_profile(profile_name, fusion=fusion)
    train_cfg = TrainConfig(
        epochs=int(resolve(config, "train.epochs", epochs, 50)),
        batch_size=int(resolve(config, "train.batch_size", batch_size, 32)),
        learning_rate=float(resolve(config, "train.learning_rate", learning_rate, 1e-4)),
        weight_decay=float(resolve(config, "train.weight_decay", weight_decay, 1e-4)),
        lr_decay=float(resolve(config, "train.lr_decay", lr_decay, 0.95)),
        seed=int(resolve(config, "train.seed", seed, 0)),
        mode=mode_name,
        points_per_cloud=int(resolve(config, "train.points_per_cloud", points, model_cfg.n_points)),
        eval_every=int(resolve(config, "train.eval_every", None, 0)),
    )
    backends = make_backends(config, corpus=load_corpus(root))
    write_run_manifest(
        out, "train",
        {
            "data": str(root), "setting": setting, "fold": fold,
            "profile": profile_name, "train": dataclass_dict(train_cfg),
        },
        backends.ids(),
    )
    bank = _load_bank(root, index, backends, n_aug=2)
    templates = load_templates(root)
    result = fit(
        index, split, train_cfg, model_cfg,
        backends=backends, bank=bank, templates=templates,
        log_path=out / "metrics.jsonl",
    )
    save_checkpoint(
        out / "checkpoint", result.model,
        extra={
            "train_config": dataclass_dict(train_cfg),
            "setting": setting,
            "fold": fold,
            "lr_schedule": f"multiplicative decay {train_cfg.lr_decay} per epoch (LambdaLR stand-in)",
            "final_loss": result.history[-1]["loss"] if result.history else None,
        },
    )
    logger.info("training finished in %.1fs; checkpoint at %s", result.train_seconds, out / "checkpoint")


def dataclass_dict(obj) -> dict:
    import dataclasses

    return dataclasses.asdict(obj)


@cli.command("eval")
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--checkpoint", "checkpoint_dir", type=click.Path(file_okay=False), default=None)
@click.option("--setting", type=click.Choice(["instance", "class", "task"]), required=True)
@click.option("--fold", type=int, required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--scorer", type=click.Choice(["model", "oracle"]), default="model", show_default=True)
@click.option("--mode", type=click.Choice(["full", "semantic-only", "geometric-only", "vanilla", "concat-fusion"]), default="full")
def eval_cmd(data_dir, config_path, checkpoint_dir, setting, fold, out_path, scorer, mode) -> None:
    """Evaluate a checkpoint (or the label oracle) on one held-out fold."""
    config = load_config(config_path)
    root = Path(data_dir)
    index = load_dataset(root)
    split = read_split(root, setting, fold)
    backends = make_backends(config, corpus=load_corpus(root))
    out = Path(out_path)
    write_run_manifest(
        out.parent if out.parent != Path("") else Path("."),
        "eval",
        {"data": str(root), "checkpoint": checkpoint_dir, "setting": setting,
         "fold": fold, "scorer": scorer, "mode": mode},
        backends.ids(),
    )
    if scorer == "oracle":
        report = evaluate(OracleScorer(), index, split)
    else:
        if checkpoint_dir is None:
            raise click.UsageError("--checkpoint is required unless --scorer oracle")
        model, _ = load_checkpoint(checkpoint_dir)
        bank = _load_bank(root, index, backends, n_aug=2)
        pipeline = FeaturePipeline(index, bank, backends, model.cfg, load_templates(root))
        report = evaluate(ModelScorer(model, pipeline, mode=mode), index, split)
    report.save(out)
    logger.info(
        "instance mAP %.4f | class mAP %.4f | task mAP %.4f -> %s",
        report.instance_map, report.class_map, report.task_map, out,
    )


@cli.command("rank")
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--checkpoint", "checkpoint_dir", type=click.Path(file_okay=False), required=True)
@click.option("--instance", "instance_id", required=True)
@click.option("--task", required=True)
@click.option("--object-class", "object_class", default=None,
              help="Class named in the instruction; defaults to the instance's class.")
@click.option("--top-k", type=int, default=None)
@click.option("--threshold", type=float, default=0.5, show_default=True)
@click.option("--mode", type=click.Choice(["full", "semantic-only", "geometric-only", "vanilla", "concat-fusion"]), default="full")
@click.option("--dump-cloud", "dump_path", type=click.Path(dir_okay=False), default=None,
              help="Write a score-colored PLY of the cloud and candidate grasps.")
def rank_cmd(data_dir, config_path, checkpoint_dir, instance_id, task, object_class,
             top_k, threshold, mode, dump_path) -> None:
    """Score one instance's candidates for an instruction and print the ranking."""
    config = load_config(config_path)
    root = Path(data_dir)
    index = load_dataset(root)
    if instance_id not in index.instances:
        raise DatasetError(f"unknown instance {instance_id!r}")
    record = index.instances[instance_id]
    backends = make_backends(config, corpus=load_corpus(root))
    model, _ = load_checkpoint(checkpoint_dir)
    bank = _load_bank(root, index, backends, n_aug=2)
    pipeline = FeaturePipeline(index, bank, backends, model.cfg, load_templates(root))
    class_name = object_class or record.class_id
    samples = [
        TrainSample(
            instance_id=instance_id, grasp_index=gi, task_id=task, label=None,
            seed=derive_seed("rank", instance_id, gi, task), class_id=class_name,
        )
        for gi in range(len(record.grasps))
    ]
    scores = score_samples(model, pipeline, samples, mode=mode)
    scored = [
        ScoredGrasp(instance_id=instance_id, grasp_index=gi, task_id=task, score=float(s))
        for gi, s in enumerate(scores)
    ]
    ranked, reject = rank_and_decide(scored, top_k=top_k, reject_threshold=threshold)
    click.echo(f"instance={instance_id} class={class_name} task={task}")
    click.echo("rank  grasp  score")
    for r, g in enumerate(ranked, start=1):
        click.echo(f"{r:>4}  {g.grasp_index:>5}  {g.score:.4f}")
    click.echo(f"reject={'true' if reject else 'false'} (threshold {threshold})")
    if dump_path is not None:
        _dump_colored_cloud(Path(dump_path), record, scores)
        logger.info("wrote %s", dump_path)


def _dump_colored_cloud(path: Path, record, scores: np.ndarray) -> None:
    """ASCII PLY: object points gray, control points colored red->green by score."""
    from .geometry import pose_to_control_points

    rows = [f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} 128 128 128" for p in record.cloud.points]
    for grasp, score in zip(record.grasps, scores):
        green = int(round(255 * float(np.clip(score, 0, 1))))
        red = 255 - green
        for p in pose_to_control_points(grasp.pose).points:
            rows.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {red} {green} 0")
    header = [
        "ply", "format ascii 1.0", f"element vertex {len(rows)}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(header + rows) + "\n", encoding="utf-8")


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show(file=sys.stderr)
        return USAGE_ERROR
    except click.Abort:
        return USAGE_ERROR
    except TrainingDiverged as exc:
        logger.error("numerical failure: %s (samples: %s)", exc, ", ".join(exc.sample_ids[:5]))
        return NUMERICAL_ERROR
    except _DATA_ERRORS as exc:
        logger.error("%s", exc)
        return DATA_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
