"""Écriture des artefacts: CSV, cartes PGM 16 bits et manifeste (nom, taille, sha256)."""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from src.transform.projections import Projection

PGM_MAX = 65535
FLOAT_FORMAT = "%.17g"

logger = logging.getLogger(__name__)


def write_csv(frame: pd.DataFrame, path: str | Path) -> Path:
    """Écrit un DataFrame en CSV avec une représentation des flottants stable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"CSV écrit: {path} ({len(frame)} lignes)")
    return path


def write_projection_csv(proj: Projection, path: str | Path) -> Path:
    """Projection au format long (row, col, value)."""
    return write_csv(proj.to_frame(), path)


def scale_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".scale")


def write_pgm(values: np.ndarray, path: str | Path) -> Path:
    """Carte PGM binaire 16 bits (P5), mise à l'échelle linéaire min-max.

    Le min et le max sont écrits dans un fichier ``.scale`` à côté.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(data)
    lo = float(data[finite].min()) if finite.any() else 0.0
    hi = float(data[finite].max()) if finite.any() else 0.0
    data = np.where(finite, data, lo)
    if hi > lo:
        pixels = np.rint((data - lo) / (hi - lo) * PGM_MAX).astype(">u2")
    else:
        pixels = np.zeros(data.shape, dtype=">u2")
    height, width = data.shape
    with path.open("wb") as fh:
        fh.write(f"P5\n{width} {height}\n{PGM_MAX}\n".encode("ascii"))
        fh.write(pixels.tobytes())
    scale_path(path).write_text(f"min={lo!r}\nmax={hi!r}\n", encoding="utf-8")
    return path


def read_pgm(path: str | Path) -> tuple[np.ndarray, dict[str, float]]:
    """Relit une carte PGM 16 bits et son échelle."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Fichier non trouvé: {path}")
    raw = path.read_bytes()
    magic, dims, maxval, payload = raw.split(b"\n", 3)
    if magic != b"P5" or int(maxval) != PGM_MAX:
        raise ValueError(f"PGM 16 bits attendu dans {path}")
    width, height = (int(v) for v in dims.split())
    pixels = np.frombuffer(payload, dtype=">u2").reshape(height, width)
    scale = {}
    sidecar = scale_path(path)
    if sidecar.exists():
        for line in sidecar.read_text(encoding="utf-8").splitlines():
            key, _, value = line.partition("=")
            scale[key] = float(value)
    return pixels.astype(np.uint16), scale


def file_sha256(path: str | Path, block_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(block_size), b""):
            digest.update(block)
    return digest.hexdigest()


class ArtifactManifest:
    """Manifeste des artefacts d'un répertoire de sortie."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.entries: list[dict] = []

    def add(self, path: str | Path) -> ArtifactManifest:
        path = Path(path)
        name = path.relative_to(self.root).as_posix() if path.is_relative_to(self.root) else path.name
        self.entries = [e for e in self.entries if e["name"] != name]
        self.entries.append(
            {"name": name, "size": path.stat().st_size, "sha256": file_sha256(path)}
        )
        return self

    def extend(self, paths: list[Path]) -> ArtifactManifest:
        for path in paths:
            self.add(path)
        return self

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.entries, columns=["name", "size", "sha256"])
        return frame.sort_values("name", ignore_index=True)

    def write(self, filename: str = "manifest.csv") -> Path:
        """Écrit ``manifest.csv`` dans le répertoire racine."""
        path = write_csv(self.to_frame(), self.root / filename)
        logger.info(f"📦 Manifeste: {len(self.entries)} artefacts dans {path}")
        return path
