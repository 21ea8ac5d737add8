"""Stage orchestration: synth -> stage1 -> train -> eval, with content
hashing for staleness checks, resumption, and byte-determinism audits."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from unsupseg.alignment import TargetMap, build_targets, label_counts, stats_from_counts
from unsupseg.clustering import (
    assign_feature_map,
    fuse_labels,
    kmeans_fit,
    project_q_to_pixels,
)
from unsupseg.config import PipelineConfig
from unsupseg.containers import (
    FeatureMap,
    ImageTile,
    LabelMap,
    RegionMap,
    SplitManifest,
    load_manifest,
    read_container,
    read_maskset,
    write_container,
)
from unsupseg.crf import crf_refine
from unsupseg.errors import DataError
from unsupseg.evaluation import (
    accumulate_confusion,
    compute_metrics,
    format_report,
    hungarian_match,
)
from unsupseg.proposals import (
    close_regions,
    composite_masks,
    divide_elongated,
    fill_coverage,
    filter_masks,
)
from unsupseg.synth import generate_split
from unsupseg.training import load_head, predict, save_head, train

STAGE1_KEYS = ("seed", "num_classes", "patch", "proposals", "kmeans")
TRAIN_KEYS = STAGE1_KEYS + ("align", "loss")
EVAL_KEYS = TRAIN_KEYS + ("crf",)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_mapping(mapping: dict) -> str:
    return hashlib.sha256(json.dumps(mapping, sort_keys=True).encode()).hexdigest()


def _input_hashes(manifest: SplitManifest, kinds: tuple[str, ...]) -> dict:
    hashes = {}
    for rec in manifest.records:
        for kind in kinds:
            rel = getattr(rec, kind)
            if rel is not None:
                hashes[rel] = _sha256(manifest.resolve(rel))
    return hashes


def _write_state(stage_dir: Path, state: dict) -> None:
    (stage_dir / "state.json").write_text(
        json.dumps(state, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def _state_matches(stage_dir: Path, expected_input: dict) -> bool:
    """True when state.json exists, its inputs match, and every recorded
    output file still hashes to the recorded value."""
    state_path = stage_dir / "state.json"
    if not state_path.is_file():
        return False
    try:
        state = json.loads(state_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    if state.get("inputs") != expected_input:
        return False
    for rel, digest in state.get("outputs", {}).items():
        path = stage_dir / rel
        if not path.is_file() or _sha256(path) != digest:
            return False
    return True


def _collect_tile_errors(manifest: SplitManifest, kinds: tuple[str, ...]) -> list[str]:
    errors = []
    for rec in manifest.records:
        for kind in kinds:
            rel = getattr(rec, kind)
            if rel is None:
                errors.append(f"tile {rec.id}: manifest has no {kind}")
            elif not manifest.resolve(rel).is_file():
                errors.append(f"tile {rec.id}: missing {rel}")
    return errors


def load_split(manifest_path, kinds: tuple[str, ...]) -> SplitManifest:
    """Load a manifest and fail with a per-tile report when inputs are missing."""
    manifest = load_manifest(manifest_path, check_files=False)
    errors = _collect_tile_errors(manifest, kinds)
    if errors:
        raise DataError("missing inputs:\n" + "\n".join(errors))
    return manifest


# ---------------------------------------------------------------------------
# Stage I
# ---------------------------------------------------------------------------


def stage1_regions(maskset, cfg: PipelineConfig) -> RegionMap:
    """Structural chain: filter -> composite -> close -> fill -> divide."""
    pcfg = cfg.proposal_config()
    kept = filter_masks(maskset, pcfg)
    regions = composite_masks(kept, pcfg)
    regions = close_regions(regions, pcfg.closing_radius)
    regions, no_coverage = fill_coverage(regions)
    if no_coverage:
        raise DataError("no mask survived filtering; cannot build regions")
    return divide_elongated(regions, pcfg)


def run_stage1(manifest_path, cfg: PipelineConfig, out_dir) -> Path:
    """Region maps, pre-pseudo-labels, cached region stats, and centroids."""
    manifest = load_split(manifest_path, ("feature_path", "maskset_path"))
    stage_dir = Path(out_dir)
    stage_dir.mkdir(parents=True, exist_ok=True)

    inputs = {
        "config": cfg.subset(STAGE1_KEYS),
        "files": _input_hashes(manifest, ("feature_path", "maskset_path")),
    }
    if _state_matches(stage_dir, inputs):
        return stage_dir

    features = {}
    for rec in manifest.records:
        arr = read_container(manifest.resolve(rec.feature_path))
        if arr.ndim != 3:
            raise DataError(f"tile {rec.id}: features must be (gh, gw, dim), got {arr.shape}")
        features[rec.id] = FeatureMap(arr)
    dims = {fm.dim for fm in features.values()}
    if len(dims) != 1:
        raise DataError(f"inconsistent feature dims across tiles: {sorted(dims)}")

    pooled = np.concatenate(
        [features[rec.id].values.reshape(-1, features[rec.id].dim) for rec in manifest.records]
    )
    model, _ = kmeans_fit(
        pooled,
        k=cfg.num_classes,
        seed=cfg.seed,
        restarts=cfg["kmeans.restarts"],
        max_iter=cfg["kmeans.max_iter"],
        tol=cfg["kmeans.tol"],
    )
    write_container(model.centroids.astype(np.float32), stage_dir / "centroids.wkt")

    outputs = {"centroids.wkt": _sha256(stage_dir / "centroids.wkt")}
    for rec in manifest.records:
        maskset = read_maskset(manifest.resolve(rec.maskset_path))
        fm = features[rec.id]
        regions = stage1_regions(maskset, cfg)
        if (regions.height, regions.width) != (maskset.height, maskset.width):
            raise DataError(f"tile {rec.id}: region map dims drifted")
        q = assign_feature_map(fm, model)
        q_pixels = project_q_to_pixels(q, maskset.height, maskset.width, cfg.patch)
        pseudo = fuse_labels(regions, q_pixels)
        counts = label_counts(q_pixels, regions, cfg.num_classes)

        for suffix, payload in (
            ("regions.wkt", regions.region_ids),
            ("plabel.wkt", pseudo.labels),
            ("stats.wkt", counts[1:].astype(np.uint32)),
        ):
            name = f"{rec.id}.{suffix}"
            write_container(payload, stage_dir / name)
            outputs[name] = _sha256(stage_dir / name)

    _write_state(stage_dir, {"inputs": inputs, "outputs": outputs})
    return stage_dir


def load_stage1_tile(stage_dir: Path, tile_id: str, num_classes: int):
    """(RegionMap, pseudo LabelMap, stats list) for one tile."""
    regions = RegionMap(read_container(stage_dir / f"{tile_id}.regions.wkt"))
    pseudo = LabelMap(
        read_container(stage_dir / f"{tile_id}.plabel.wkt"), num_classes=num_classes
    )
    raw = read_container(stage_dir / f"{tile_id}.stats.wkt").astype(np.int64)
    counts = np.vstack([np.zeros((1, raw.shape[1]), np.int64), raw])
    return regions, pseudo, stats_from_counts(counts)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _check_stage1_fresh(stage_dir: Path, manifest: SplitManifest, cfg: PipelineConfig) -> bool:
    expected = {
        "config": cfg.subset(STAGE1_KEYS),
        "files": _input_hashes(manifest, ("feature_path", "maskset_path")),
    }
    return _state_matches(stage_dir, expected)


def run_train(
    manifest_path,
    cfg: PipelineConfig,
    stage1_dir,
    out_dir,
    force: bool = False,
    no_tau_gate: bool = False,
    no_confidence_weight: bool = False,
) -> Path:
    """Build targets from cached stage-1 outputs and train the head."""
    manifest = load_split(manifest_path, ("feature_path",))
    stage1 = Path(stage1_dir)
    stage_dir = Path(out_dir)
    if not _check_stage1_fresh(stage1, manifest, cfg) and not force:
        raise DataError(
            f"stage1 outputs at {stage1} are stale for the current config/manifest; "
            "rerun stage1 or pass --force"
        )

    stage_dir.mkdir(parents=True, exist_ok=True)
    targets_dir = stage_dir / "targets"
    targets_dir.mkdir(exist_ok=True)
    inputs = {
        "config": cfg.subset(TRAIN_KEYS),
        "flags": {"no_tau_gate": no_tau_gate, "no_confidence_weight": no_confidence_weight},
        "stage1": _sha256(stage1 / "state.json"),
        "files": _input_hashes(manifest, ("feature_path",)),
    }
    if _state_matches(stage_dir, inputs):
        return stage_dir

    # Removing confidence-weighted supervision (the Table-3-style ablation)
    # strips the whole confidence pathway: every element gets the plain
    # majority hard label and the loss runs with unit reliability weights.
    align_cfg = cfg.align_config(force_soft=no_tau_gate, force_hard=no_confidence_weight)
    features_list = []
    targets_list = []
    outputs = {}
    for rec in manifest.records:
        fm = FeatureMap(read_container(manifest.resolve(rec.feature_path)))
        regions, _, stats = load_stage1_tile(stage1, rec.id, cfg.num_classes)
        tm = build_targets(stats, regions, align_cfg)
        if (tm.grid_h, tm.grid_w) != (fm.grid_h, fm.grid_w):
            raise DataError(f"tile {rec.id}: target grid does not match feature grid")
        features_list.append(fm)
        targets_list.append(tm)
        for suffix, payload in (
            ("y.wkt", tm.y.astype(np.float32)),
            ("conf.wkt", tm.confidence.astype(np.float32)),
            ("hard.wkt", tm.hard.astype(np.uint8)),
        ):
            name = f"targets/{rec.id}.{suffix}"
            write_container(payload, stage_dir / name)
            outputs[name] = _sha256(stage_dir / name)

    head, history = train(
        features_list, targets_list, cfg.loss_config(no_confidence_weight), seed=cfg.seed
    )
    write_container(save_head(head), stage_dir / "head.wkt")
    log_lines = "".join(f"{epoch}\t{loss:.10f}\n" for epoch, loss in enumerate(history, 1))
    (stage_dir / "loss_log.tsv").write_text(log_lines, encoding="utf-8")
    outputs["head.wkt"] = _sha256(stage_dir / "head.wkt")
    outputs["loss_log.tsv"] = _sha256(stage_dir / "loss_log.tsv")
    _write_state(stage_dir, {"inputs": inputs, "outputs": outputs})
    return stage_dir


# ---------------------------------------------------------------------------
# Prediction and evaluation
# ---------------------------------------------------------------------------


def predict_tile(
    rec,
    manifest: SplitManifest,
    cfg: PipelineConfig,
    predictor: str,
    head=None,
    centroids: np.ndarray | None = None,
    stage1_dir: Path | None = None,
    with_crf: bool = True,
) -> LabelMap:
    """One tile's pixel prediction under the requested predictor.

    predictor: "head" (trained head logits), "kmeans" (cluster map as the
    prediction), or "pseudo" (stage-1 pre-pseudo-label).
    """
    if predictor == "pseudo":
        if stage1_dir is None:
            raise DataError("pseudo predictor needs a stage1 directory")
        pred = LabelMap(
            read_container(Path(stage1_dir) / f"{rec.id}.plabel.wkt"),
            num_classes=cfg.num_classes,
        )
        height, width = pred.height, pred.width
    else:
        fm = FeatureMap(read_container(manifest.resolve(rec.feature_path)))
        height = fm.grid_h * cfg.patch
        width = fm.grid_w * cfg.patch
        if predictor == "head":
            if head is None:
                raise DataError("head predictor needs head parameters")
            pred = predict(head, fm, height, width, cfg.patch)
        elif predictor == "kmeans":
            if centroids is None:
                raise DataError("kmeans predictor needs centroids")
            from unsupseg.clustering import ClusterModel

            model = ClusterModel(
                centroids=centroids, inertia=0.0, iterations_run=0, seed=cfg.seed
            )
            q = assign_feature_map(fm, model)
            pred = project_q_to_pixels(q, height, width, cfg.patch)
        else:
            raise DataError(f"unknown predictor {predictor!r}")

    if with_crf:
        image = ImageTile(read_container(manifest.resolve(rec.image_path)))
        if (image.height, image.width) != (pred.height, pred.width):
            raise DataError(f"tile {rec.id}: image dims do not match the prediction")
        pred = crf_refine(pred, image, cfg.crf_config())
    return pred


def run_eval(
    manifest_path,
    cfg: PipelineConfig,
    out_dir,
    head_path=None,
    stage1_dir=None,
    with_crf: bool = True,
    predictor: str = "head",
    save_predictions: bool = True,
) -> dict:
    """Predict over a split, refine, accumulate confusion, match, report."""
    kinds = ["image_path"] if with_crf else []
    if predictor != "pseudo":
        kinds.append("feature_path")
    manifest = load_split(manifest_path, tuple(kinds))
    missing_gt = [rec.id for rec in manifest.records if rec.label_path is None
                  or not manifest.resolve(rec.label_path).is_file()]
    if missing_gt:
        raise DataError(f"evaluation needs ground truth labels; missing for {missing_gt}")

    stage_dir = Path(out_dir)
    stage_dir.mkdir(parents=True, exist_ok=True)
    head = None
    centroids = None
    if predictor == "head":
        if head_path is None:
            raise DataError("predictor 'head' needs --head")
        head = load_head(read_container(head_path))
    elif predictor == "kmeans":
        if stage1_dir is None:
            raise DataError("predictor 'kmeans' needs a stage1 directory")
        centroids = read_container(Path(stage1_dir) / "centroids.wkt").astype(np.float64)

    confusion = None
    pred_dir = stage_dir / "predictions"
    if save_predictions:
        pred_dir.mkdir(exist_ok=True)
    for rec in manifest.records:
        pred = predict_tile(
            rec, manifest, cfg, predictor,
            head=head, centroids=centroids, stage1_dir=stage1_dir, with_crf=with_crf,
        )
        gt = LabelMap(
            read_container(manifest.resolve(rec.label_path)), num_classes=cfg.num_classes
        )
        confusion = accumulate_confusion(pred, gt, confusion)
        if save_predictions:
            write_container(pred.labels, pred_dir / f"{rec.id}.pred.wkt")

    matching = hungarian_match(confusion)
    report = compute_metrics(confusion, matching)
    text = format_report(report)
    (stage_dir / "report.txt").write_text(text, encoding="utf-8")
    return {"report": report, "text": text, "dir": stage_dir}


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


def write_tree_hashes(root: Path, out_name: str = "hashes.txt") -> Path:
    """sha256 of every file under root (sorted), for reproducibility audits."""
    root = Path(root)
    lines = []
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name != out_name:
            lines.append(f"{_sha256(path)}  {path.relative_to(root).as_posix()}\n")
    target = root / out_name
    target.write_text("".join(lines), encoding="utf-8")
    return target


def run_all(
    cfg: PipelineConfig,
    out_dir,
    no_tau_gate: bool = False,
    no_confidence_weight: bool = False,
    no_crf: bool = False,
) -> dict:
    """synth -> stage1 -> train -> eval(test split), then hash the tree."""
    out = Path(out_dir)
    data_dir = out / "data"
    stage = "synth"
    try:
        synth_inputs = {"config": cfg.subset(("seed", "num_classes", "patch", "scene"))}
        if not _state_matches(data_dir, synth_inputs):
            generate_split(cfg.scene_config(), cfg["scene.n_tiles"], cfg.seed, data_dir)
            outputs = {
                p.relative_to(data_dir).as_posix(): _sha256(p)
                for p in sorted(data_dir.rglob("*"))
                if p.is_file() and p.name != "state.json"
            }
            _write_state(data_dir, {"inputs": synth_inputs, "outputs": outputs})
        stage = "stage1"
        run_stage1(data_dir / "train.tsv", cfg, out / "stage1")
        stage = "train"
        run_train(
            data_dir / "train.tsv", cfg, out / "stage1", out / "train",
            no_tau_gate=no_tau_gate, no_confidence_weight=no_confidence_weight,
        )
        stage = "eval"
        result = run_eval(
            data_dir / "test.tsv", cfg, out / "eval",
            head_path=out / "train" / "head.wkt",
            stage1_dir=out / "stage1",
            with_crf=not no_crf,
        )
    except Exception as exc:
        raise DataError(f"pipeline failed in stage {stage!r}: {exc}") from exc
    write_tree_hashes(out)
    return result
