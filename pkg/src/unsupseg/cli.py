"""Command-line entry points.

Subcommands: synth, stage1, train, predict, eval, all. Exit codes:
0 success, 1 usage or configuration error, 2 data error.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from unsupseg.config import default_config, load_config
from unsupseg.containers import LabelMap, read_container, write_container
from unsupseg.errors import ConfigError, DataError, FormatError, ManifestError
from unsupseg.pipeline import (
    load_split,
    predict_tile,
    run_all,
    run_eval,
    run_stage1,
    run_train,
    write_tree_hashes,
)
from unsupseg.synth import generate_split
from unsupseg.training import load_head


def _load_cfg(config_path, seed):
    cfg = load_config(config_path) if config_path else default_config()
    if seed is not None:
        cfg = cfg.with_overrides(seed=seed)
    return cfg


def common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      help="Pipeline config file (key = value lines).")(fn)
    fn = click.option("--seed", type=int, default=None, help="Override the global seed.")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), required=True,
                      help="Output directory.")(fn)
    return fn


@click.group()
def cli():
    """Unsupervised segmentation pipeline for degraded grayscale tiles."""


@cli.command()
@common_options
@click.option("--n-tiles", type=int, default=None, help="Override scene.n_tiles.")
def synth(config_path, seed, out_dir, n_tiles):
    """Generate a synthetic train/val/test split."""
    cfg = _load_cfg(config_path, seed)
    n = n_tiles if n_tiles is not None else cfg["scene.n_tiles"]
    generate_split(cfg.scene_config(), n, cfg.seed, out_dir)
    click.echo(f"wrote {n} tiles under {out_dir}")


@cli.command()
@common_options
@click.option("--manifest", type=click.Path(exists=True), required=True)
def stage1(config_path, seed, out_dir, manifest):
    """Region proposals, clustering, and pre-pseudo-labels for a split."""
    cfg = _load_cfg(config_path, seed)
    run_stage1(manifest, cfg, out_dir)
    click.echo(f"stage1 outputs in {out_dir}")


@cli.command()
@common_options
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--stage1-dir", type=click.Path(exists=True), required=True)
@click.option("--force", is_flag=True, help="Ignore a stale stage1 hash.")
@click.option("--no-tau-gate", is_flag=True, help="Ablation: all targets soft.")
@click.option("--no-confidence-weight", is_flag=True,
              help="Ablation: drop the c^beta reliability weight.")
def train(config_path, seed, out_dir, manifest, stage1_dir, force, no_tau_gate,
          no_confidence_weight):
    """Build confidence-aware targets and train the segmentation head."""
    cfg = _load_cfg(config_path, seed)
    run_train(manifest, cfg, stage1_dir, out_dir, force=force,
              no_tau_gate=no_tau_gate, no_confidence_weight=no_confidence_weight)
    click.echo(f"training outputs in {out_dir}")


@cli.command()
@common_options
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--head", "head_path", type=click.Path(exists=True), required=True)
@click.option("--no-crf", is_flag=True, help="Skip mean-field refinement.")
def predict(config_path, seed, out_dir, manifest, head_path, no_crf):
    """Write per-tile predicted label maps."""
    cfg = _load_cfg(config_path, seed)
    kinds = ("feature_path",) if no_crf else ("feature_path", "image_path")
    split = load_split(manifest, kinds)
    head = load_head(read_container(head_path))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in split.records:
        pred = predict_tile(rec, split, cfg, "head", head=head, with_crf=not no_crf)
        write_container(pred.labels, out / f"{rec.id}.pred.wkt")
    click.echo(f"predictions in {out}")


@cli.command()
@common_options
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--head", "head_path", type=click.Path(), default=None)
@click.option("--stage1-dir", type=click.Path(), default=None)
@click.option("--no-crf", is_flag=True, help="Ablation: skip refinement.")
@click.option("--predictor", type=click.Choice(["head", "kmeans", "pseudo"]),
              default="head", show_default=True,
              help="Evaluate the head, the raw cluster map, or the pseudo-labels.")
def eval(config_path, seed, out_dir, manifest, head_path, stage1_dir, no_crf, predictor):
    """Evaluate a split: Hungarian-matched mIoU and overall accuracy."""
    cfg = _load_cfg(config_path, seed)
    result = run_eval(manifest, cfg, out_dir, head_path=head_path,
                      stage1_dir=stage1_dir, with_crf=not no_crf, predictor=predictor)
    click.echo(result["text"], nl=False)


@cli.command(name="all")
@common_options
@click.option("--no-tau-gate", is_flag=True)
@click.option("--no-confidence-weight", is_flag=True)
@click.option("--no-crf", is_flag=True)
def run_all_cmd(config_path, seed, out_dir, no_tau_gate, no_confidence_weight, no_crf):
    """Full pipeline: synth -> stage1 -> train -> eval, plus a hash manifest."""
    cfg = _load_cfg(config_path, seed)
    result = run_all(cfg, out_dir, no_tau_gate=no_tau_gate,
                     no_confidence_weight=no_confidence_weight, no_crf=no_crf)
    click.echo(result["text"], nl=False)
    click.echo(f"artifacts in {out_dir}; tree hashes in {Path(out_dir) / 'hashes.txt'}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:  # --help and friends
        return int(exc.exit_code)
    except (click.UsageError, ConfigError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except (DataError, ManifestError, FormatError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
