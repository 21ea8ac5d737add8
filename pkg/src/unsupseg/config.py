"""Plain-text pipeline configuration with a strict key schema.

One `key = value` pair per line; `#` starts a comment. Keys are
namespaced by module (proposals.*, kmeans.*, align.*, loss.*, crf.*,
scene.*) plus the globals seed, num_classes, and patch. Unknown keys are
rejected by name.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from unsupseg.alignment import AlignConfig
from unsupseg.crf import CrfConfig
from unsupseg.errors import ConfigError
from unsupseg.proposals import ProposalConfig
from unsupseg.synth import SceneConfig
from unsupseg.training import LossConfig


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


_SCHEMA: dict[str, tuple] = {
    "seed": (int, 0),
    "num_classes": (int, 5),
    "patch": (int, 8),
    "proposals.min_area": (int, 32),
    "proposals.min_saliency": (float, 0.5),
    "proposals.iou_threshold": (float, 0.5),
    "proposals.closing_radius": (int, 1),
    "proposals.elongation_threshold": (float, 4.0),
    "proposals.spacing": (int, 32),
    "proposals.jitter": (float, 0.5),
    "kmeans.restarts": (int, 10),
    "kmeans.max_iter": (int, 100),
    "kmeans.tol": (float, 1e-4),
    "align.strength": (float, 4.0),
    "align.erosion_band": (_parse_bool, True),
    "loss.alpha": (float, 1.0),
    "loss.gamma": (float, 2.0),
    "loss.beta": (float, 0.5),
    "loss.learning_rate": (float, 0.1),
    "loss.epochs": (int, 50),
    "loss.batch": (int, 8),
    "crf.iterations": (int, 5),
    "crf.spatial_sigma": (float, 3.0),
    "crf.intensity_sigma": (float, 10.0),
    "crf.pairwise_weight": (float, 1.0),
    "crf.unary_confidence": (float, 0.7),
    "scene.size": (int, 128),
    "scene.shapes_per_tile": (int, 7),
    "scene.mask_noise": (int, 1),
    "scene.label_noise": (float, 0.1),
    "scene.feature_dim": (int, 16),
    "scene.feature_sigma": (float, 0.35),
    "scene.image_noise": (float, 12.0),
    "scene.n_tiles": (int, 100),
}


@dataclass(frozen=True)
class PipelineConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, **overrides) -> "PipelineConfig":
        updated = dict(self.values)
        for key, value in overrides.items():
            dotted = key.replace("__", ".")
            if dotted not in _SCHEMA:
                raise ConfigError(f"unknown config key {dotted!r}")
            updated[dotted] = value
        return PipelineConfig(values=updated)

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def num_classes(self) -> int:
        return self.values["num_classes"]

    @property
    def patch(self) -> int:
        return self.values["patch"]

    def proposal_config(self) -> ProposalConfig:
        return ProposalConfig(
            min_area=self["proposals.min_area"],
            min_saliency=self["proposals.min_saliency"],
            iou_threshold=self["proposals.iou_threshold"],
            closing_radius=self["proposals.closing_radius"],
            elongation_threshold=self["proposals.elongation_threshold"],
        )

    def align_config(self, force_soft: bool = False, force_hard: bool = False) -> AlignConfig:
        return AlignConfig(
            strength=self["align.strength"],
            num_classes=self.num_classes,
            patch=self.patch,
            erosion_band=self["align.erosion_band"],
            force_soft=force_soft,
            force_hard=force_hard,
        )

    def loss_config(self, no_confidence_weight: bool = False) -> LossConfig:
        return LossConfig(
            alpha=self["loss.alpha"],
            gamma=self["loss.gamma"],
            beta=0.0 if no_confidence_weight else self["loss.beta"],
            learning_rate=self["loss.learning_rate"],
            epochs=self["loss.epochs"],
            batch=self["loss.batch"],
        )

    def crf_config(self) -> CrfConfig:
        return CrfConfig(
            iterations=self["crf.iterations"],
            spatial_sigma=self["crf.spatial_sigma"],
            intensity_sigma=self["crf.intensity_sigma"],
            pairwise_weight=self["crf.pairwise_weight"],
            unary_confidence=self["crf.unary_confidence"],
        )

    def scene_config(self) -> SceneConfig:
        return SceneConfig(
            size=self["scene.size"],
            num_classes=self.num_classes,
            shapes_per_tile=self["scene.shapes_per_tile"],
            mask_noise=self["scene.mask_noise"],
            label_noise=self["scene.label_noise"],
            feature_dim=self["scene.feature_dim"],
            feature_sigma=self["scene.feature_sigma"],
            image_noise=self["scene.image_noise"],
            patch=self.patch,
            seed=self.seed,
        )

    def subset(self, prefixes: tuple[str, ...]) -> dict:
        """Config slice used for stage-state hashing."""
        return {
            k: v
            for k, v in sorted(self.values.items())
            if any(k == p or k.startswith(p + ".") for p in prefixes)
        }


def default_config() -> PipelineConfig:
    return PipelineConfig(values={key: default for key, (_, default) in _SCHEMA.items()})


def parse_config_text(text: str, source: str = "<config>") -> PipelineConfig:
    values = {key: default for key, (_, default) in _SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        parser, _ = _SCHEMA[key]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return PipelineConfig(values=values)


def load_config(path) -> PipelineConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config_text(text, source=str(p))


def config_text(cfg: PipelineConfig) -> str:
    return "".join(f"{key} = {cfg.values[key]}\n" for key in sorted(cfg.values))
