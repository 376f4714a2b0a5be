"""Configuration des runs: fichiers clé=valeur, presets et variables d'environnement."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.extract.frame_io import SensorGeometry
from src.simulate.spdc import DetectorParams, SourceParams
from src.utils.exceptions import ConfigError

PRESET_DIR = Path(__file__).resolve().parents[2] / "config" / "presets"

logger = logging.getLogger(__name__)


class GridSettings(BaseModel):
    """Paramètres de la grille de modes du témoin."""

    model_config = ConfigDict(frozen=True)

    side: int = Field(default=14, ge=1)
    spacing: int = Field(default=1, ge=0)
    origin: tuple[int, int] | None = None


class RunConfig(BaseSettings):
    """Configuration complète d'un run (préfixe d'environnement ``SPADCORR_``)."""

    model_config = SettingsConfigDict(
        env_prefix="SPADCORR_",
        env_nested_delimiter="__",
        env_file_encoding="utf-8",
        extra="forbid",
    )

    mode: Literal["NF", "FF", "both"] = "both"
    source: SourceParams = Field(default_factory=SourceParams)
    detector: DetectorParams = Field(default_factory=DetectorParams)
    geometry: SensorGeometry = Field(default_factory=SensorGeometry)
    grid: GridSettings = Field(default_factory=GridSettings)
    n_frames: int = Field(default=1_000_000, ge=0)
    checkpoints: list[int] = Field(default_factory=list)
    anchors: list[tuple[int, int]] = Field(default_factory=list)
    seed: int = 0
    output_dir: Path = Path("runs/latest")
    workers: int = Field(default=1, ge=1)
    chunk_size: int = Field(default=65536, ge=1)
    n_blocks: int = Field(default=20, ge=1)
    length_unit: Literal["nm", "um", "mm", "m"] = "um"

    @field_validator("checkpoints")
    @classmethod
    def _ascending(cls, value: list[int]) -> list[int]:
        if any(n <= 0 for n in value) or value != sorted(set(value)):
            raise ValueError("checkpoints doit être une liste strictement croissante d'entiers > 0")
        return value

    @field_validator("output_dir")
    @classmethod
    def _creatable(cls, value: Path) -> Path:
        if value.exists() and not value.is_dir():
            raise ValueError(f"output_dir existe et n'est pas un répertoire: {value}")
        return value

    @property
    def modes(self) -> list[str]:
        return ["NF", "FF"] if self.mode == "both" else [self.mode]

    @classmethod
    def from_file(cls, path: str | Path) -> RunConfig:
        """Configuration lue depuis un fichier clé=valeur."""
        return load_config(path)


def preset_path(name: str) -> Path:
    path = PRESET_DIR / f"{name}.env"
    if not path.exists():
        available = sorted(p.stem for p in PRESET_DIR.glob("*.env"))
        raise ConfigError(f"Preset inconnu: {name!r} (disponibles: {', '.join(available)})")
    return path


def load_config(
    config: str | Path | None = None,
    preset: str | None = None,
    **overrides: Any,
) -> RunConfig:
    """Charge une RunConfig: preset, puis fichier, puis surcharges explicites.

    Args:
        config: Fichier clé=valeur (``SPADCORR_MODE=FF``, ``SPADCORR_SOURCE__DELTA_R_TRUE=4.3``)
        preset: Nom d'un preset de ``config/presets``
        **overrides: Valeurs prioritaires (options de la ligne de commande)

    Returns:
        RunConfig validée

    """
    files: list[Path] = []
    if preset:
        files.append(preset_path(preset))
    if config:
        path = Path(config)
        if not path.exists():
            raise FileNotFoundError(f"Fichier de configuration non trouvé: {config}")
        files.append(path)

    overrides = {key: value for key, value in overrides.items() if value is not None}
    cfg = RunConfig(_env_file=tuple(files) or None, **overrides)
    logger.info(
        f"⚙️  Configuration chargée ({', '.join(p.name for p in files) or 'défauts'}): "
        f"mode={cfg.mode}, N={cfg.n_frames}, graine={cfg.seed}"
    )
    return cfg


def dump_config(cfg: RunConfig) -> str:
    """Sérialise une RunConfig au format clé=valeur relisible par ``load_config``."""
    lines = []

    def emit(prefix: str, value: Any) -> None:
        if isinstance(value, dict):
            for key, item in value.items():
                emit(f"{prefix}__{key.upper()}", item)
        elif value is None:
            return
        elif isinstance(value, (list, tuple)):
            lines.append(f"{prefix}={_json(value)}")
        else:
            lines.append(f"{prefix}={value}")

    for key, value in cfg.model_dump(mode="json").items():
        emit(f"SPADCORR_{key.upper()}", value)
    return "\n".join(lines) + "\n"


def _json(value: Any) -> str:
    return "[" + ",".join(_json(v) if isinstance(v, (list, tuple)) else str(v) for v in value) + "]"
