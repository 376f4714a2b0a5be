"""Grille de modes discrets (base position / base impulsion) sur le capteur."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from src.extract.frame_io import SensorGeometry
from src.utils.exceptions import GridError

logger = logging.getLogger(__name__)


def horizontal_neighbor(flat: np.ndarray, width: int) -> np.ndarray:
    """Pixel voisin à droite, ou à gauche sur la dernière colonne (pas de repliement)."""
    rows, cols = np.divmod(np.asarray(flat, dtype=np.int64), width)
    cols = np.where(cols + 1 < width, cols + 1, cols - 1)
    return rows * width + cols


@dataclass(frozen=True)
class ModeGrid:
    """Grille carrée side×side de pixels séparés de ``spacing`` pixels.

    Les modes sont numérotés en ordre ligne-majeur à partir de ``origin``.
    """

    side: int
    spacing: int
    origin: tuple[int, int]
    sensor_shape: tuple[int, int]

    @property
    def d(self) -> int:
        return self.side * self.side

    @property
    def span(self) -> int:
        return self.side + (self.side - 1) * self.spacing

    @property
    def step(self) -> int:
        return self.spacing + 1

    def mode_pixel(self, m: int) -> tuple[int, int]:
        """Pixel (ligne, colonne) du mode m."""
        if not 0 <= m < self.d:
            raise GridError(f"Mode {m} hors de [0, {self.d - 1}]")
        row, col = divmod(m, self.side)
        return self.origin[0] + row * self.step, self.origin[1] + col * self.step

    @property
    def rows_cols(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.arange(self.d)
        row, col = np.divmod(idx, self.side)
        return self.origin[0] + row * self.step, self.origin[1] + col * self.step

    @property
    def pixels(self) -> np.ndarray:
        """Indices plats des pixels de la grille, mode par mode."""
        rows, cols = self.rows_cols
        return rows * self.sensor_shape[1] + cols

    def neighbors(self) -> np.ndarray:
        """Voisin horizontal de chaque mode: droite, ou gauche en bord de capteur."""
        return horizontal_neighbor(self.pixels, self.sensor_shape[1])

    def reflected(self) -> np.ndarray:
        """Pixels réfléchis par le centre du capteur (appariement en impulsion)."""
        rows, cols = self.rows_cols
        height, width = self.sensor_shape
        return (height - 1 - rows) * width + (width - 1 - cols)

    def required_pixels(self) -> np.ndarray:
        """Pixels dont les statistiques sont nécessaires aux deux bases."""
        width = self.sensor_shape[1]
        partners = np.concatenate([self.pixels, self.reflected()])
        return np.unique(np.concatenate([partners, horizontal_neighbor(partners, width)]))

    def describe(self) -> str:
        return (
            f"d={self.d} side={self.side} spacing={self.spacing} "
            f"origin={self.origin[0]},{self.origin[1]}"
        )


def select_grid(
    geometry: SensorGeometry,
    side: int = 14,
    spacing: int = 1,
    origin: tuple[int, int] | None = None,
) -> ModeGrid:
    """Sélectionne une grille de modes (centrée si ``origin`` est omis).

    Raises:
        GridError: si la grille déborde du capteur

    """
    if side < 1 or spacing < 0:
        raise GridError(f"Paramètres de grille invalides: side={side}, spacing={spacing}")
    height, width = geometry.shape
    span = side + (side - 1) * spacing
    if span > height or span > width:
        raise GridError(f"Grille de {span}×{span} pixels trop grande pour {height}×{width}")
    if origin is None:
        origin = ((height - span) // 2, (width - span) // 2)
    row, col = origin
    if row < 0 or col < 0 or row + span > height or col + span > width:
        raise GridError(f"Grille d'origine {origin} hors du capteur {height}×{width}")
    grid = ModeGrid(side, spacing, (int(row), int(col)), geometry.shape)
    logger.info(f"🔲 Grille de modes: {grid.describe()}")
    return grid
