"""Projections de Γ: conditionnelle, coordonnées somme et différence.

Grilles (2H−1)×(2W−1); le bin central (H−1, W−1) correspond à rᵢ+rⱼ sur l'axe
optique doublé (somme) ou à rᵢ−rⱼ = 0 (différence).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.signal import fftconvolve

from src.transform.jpd import AccumStats, JpdView
from src.utils.exceptions import GeometryMismatchError, GridError

SNR_EXCLUSION_RADIUS = 5.0

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Projection:
    """Carte 2D dérivée de Γ, avec sa provenance.

    ``noise`` donne, à un facteur commun près, l'écart-type de chaque bin sous
    l'hypothèse de pixels indépendants (√(Σ SᵢSⱼ)/N^1.5 sur les paires du bin).
    """

    kind: str
    values: np.ndarray
    center_index: tuple[int, int]
    n_frames_used: int
    anchor: tuple[int, int] | None = None
    snr: float | None = None
    noise: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.values.flags.writeable = False
        if self.noise is not None:
            if self.noise.shape != self.values.shape:
                raise ValueError("Carte de bruit de forme différente des valeurs")
            self.noise.flags.writeable = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def standardized(self) -> np.ndarray | None:
        """Valeurs divisées par l'écart-type attendu (0 là où il est nul)."""
        if self.noise is None:
            return None
        return _standardize(np.asarray(self.values, dtype=np.float64), self.noise)

    def to_frame(self) -> pd.DataFrame:
        """Table longue (row, col, value) en indices de grille."""
        rows, cols = np.indices(self.values.shape)
        return pd.DataFrame(
            {"row": rows.ravel(), "col": cols.ravel(), "value": self.values.ravel()}
        )


def _require_full(stats: AccumStats) -> None:
    if not stats.is_full:
        raise GeometryMismatchError("Projection impossible sur un sous-ensemble de pixels")
    if stats.n_frames < 1:
        raise ValueError("Projection indéfinie pour N = 0")


def _standardize(values: np.ndarray, noise: np.ndarray) -> np.ndarray:
    return np.divide(values, noise, out=np.zeros(values.shape), where=noise > 0)


def background_snr(
    values: np.ndarray,
    radius: float = SNR_EXCLUSION_RADIUS,
    noise: np.ndarray | None = None,
) -> tuple[float, tuple[int, int]]:
    """SNR = pic / écart-type du fond (bins à plus de ``radius`` pixels du pic).

    Avec ``noise``, pic et fond sont d'abord divisés bin par bin par leur
    écart-type attendu; les bins de bruit nul sont ignorés.

    Returns:
        (snr, position du pic)

    """
    peak = np.unravel_index(int(np.argmax(values)), values.shape)
    rows, cols = np.indices(values.shape)
    far = np.hypot(rows - peak[0], cols - peak[1]) > radius
    if noise is not None:
        far &= noise > 0
        values = _standardize(values, noise)
    peak_value = float(values[peak])
    if not far.any():
        return float("nan"), (int(peak[0]), int(peak[1]))
    spread = float(values[far].std())
    if spread == 0:
        snr = float("inf") if peak_value > 0 else 0.0
    else:
        snr = peak_value / spread
    return snr, (int(peak[0]), int(peak[1]))


def conditional_projection(stats: AccumStats, anchor: tuple[int, int] | int) -> Projection:
    """Γ(anchor, j) pour tous les pixels j; le bin de l'ancre est mis à zéro."""
    _require_full(stats)
    height, width = stats.geometry.shape
    if isinstance(anchor, (int, np.integer)):
        if not 0 <= anchor < stats.geometry.n_pixels:
            raise GridError(f"Ancre {anchor} hors du capteur")
        anchor = divmod(int(anchor), width)
    row, col = anchor
    if not (0 <= row < height and 0 <= col < width):
        raise GridError(f"Ancre {anchor} hors du capteur {height}×{width}")

    flat = row * width + col
    values = JpdView(stats).row(flat).reshape(height, width).copy()
    values[row, col] = 0.0
    n = stats.n_frames
    marginal = stats.marginal.astype(np.float64)
    noise = np.sqrt(marginal[flat] * marginal).reshape(height, width) / n**1.5
    noise[row, col] = 0.0
    snr, _ = background_snr(values, noise=noise)
    logger.debug(f"Projection conditionnelle ancre=({row}, {col}): SNR={snr:.1f}")
    return Projection("conditional", values, (row, col), n, (row, col), snr, noise)


def _pair_bins(height: int, width: int, kind: str) -> np.ndarray:
    """Index de bin plat pour chaque paire ordonnée (i, j) de pixels."""
    ys, xs = np.divmod(np.arange(height * width), width)
    if kind == "sum":
        dy = ys[:, None] + ys[None, :]
        dx = xs[:, None] + xs[None, :]
    else:
        dy = ys[:, None] - ys[None, :] + height - 1
        dx = xs[:, None] - xs[None, :] + width - 1
    return dy * (2 * width - 1) + dx


def _direct(stats: AccumStats, kind: str) -> np.ndarray:
    height, width = stats.geometry.shape
    gamma = JpdView(stats).matrix()
    np.fill_diagonal(gamma, 0.0)
    bins = _pair_bins(height, width, kind)
    size = (2 * height - 1) * (2 * width - 1)
    return np.bincount(bins.ravel(), weights=gamma.ravel(), minlength=size).reshape(
        2 * height - 1, 2 * width - 1
    )


def _accidental(stats: AccumStats, kind: str) -> np.ndarray:
    """Σ SᵢSⱼ par bin sur les paires ordonnées i ≠ j (convolution spectrale des marginales)."""
    height, width = stats.geometry.shape
    image = stats.marginal.reshape(height, width).astype(np.float64)
    if kind == "sum":
        accidental = np.rint(fftconvolve(image, image, mode="full"))
        diag = np.zeros_like(accidental)
        diag[::2, ::2] = image**2
    else:
        accidental = np.rint(fftconvolve(image, image[::-1, ::-1], mode="full"))
        diag = np.zeros_like(accidental)
        diag[height - 1, width - 1] = float((image**2).sum())
    return np.clip(accidental - diag, 0.0, None)


def _fast(stats: AccumStats, kind: str, accidental: np.ndarray) -> np.ndarray:
    height, width = stats.geometry.shape
    n = stats.n_frames

    # terme réel: histogramme des coïncidences hors diagonale
    ii, jj = np.nonzero(stats.pair_counts)
    off = ii != jj
    ii, jj = ii[off], jj[off]
    yi, xi = np.divmod(ii, width)
    yj, xj = np.divmod(jj, width)
    if kind == "sum":
        dy, dx = yi + yj, xi + xj
    else:
        dy, dx = yi - yj + height - 1, xi - xj + width - 1
    size = (2 * height - 1) * (2 * width - 1)
    genuine = np.bincount(
        dy * (2 * width - 1) + dx,
        weights=stats.pair_counts[ii, jj].astype(np.float64),
        minlength=size,
    ).reshape(2 * height - 1, 2 * width - 1)
    return genuine / n - accidental / (n * n)


def _coordinate_projection(stats: AccumStats, kind: str, method: str) -> Projection:
    _require_full(stats)
    if method not in ("direct", "fast"):
        raise ValueError(f"Méthode inconnue: {method}")
    height, width = stats.geometry.shape
    n = stats.n_frames
    accidental = _accidental(stats, kind)
    values = _direct(stats, kind) if method == "direct" else _fast(stats, kind, accidental)
    noise = np.sqrt(accidental) / n**1.5
    center = (height - 1, width - 1)
    if kind == "minus":
        values[center] = 0.0
        noise[center] = 0.0
    snr, _ = background_snr(values, noise=noise)
    return Projection(kind, values, center, n, None, snr, noise)


def sum_projection(stats: AccumStats, method: str = "fast") -> Projection:
    """P₊(s) = Σ_{i+j=s, i≠j} Γ(i, j) sur les paires ordonnées."""
    return _coordinate_projection(stats, "sum", method)


def minus_projection(stats: AccumStats, method: str = "fast") -> Projection:
    """P₋(d) = Σ_{i−j=d, i≠j} Γ(i, j); le bin central d = 0 est mis à zéro."""
    return _coordinate_projection(stats, "minus", method)
