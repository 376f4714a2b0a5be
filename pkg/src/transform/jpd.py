"""Statistiques entières suffisantes et distribution de probabilité jointe Γ.

Γ(rᵢ, rⱼ) = Cᵢⱼ/N − SᵢSⱼ/N², avec Cᵢⱼ = Σₗ Iₗ(rᵢ)Iₗ(rⱼ) et Sᵢ = Σₗ Iₗ(rᵢ).
Tout reste entier jusqu'à la division finale: le résultat ne dépend ni du
découpage en blocs ni du nombre de workers.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Iterator, Sequence
from concurrent.futures import Future, ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from prometheus_client import Counter, Histogram
from scipy import sparse
from tqdm import tqdm

from src.extract.frame_io import FrameReader, FrameSet, SensorGeometry, iter_chunks, pack_frames
from src.utils.exceptions import GeometryMismatchError, OracleSizeError

FRAMES_ACCUMULATED = Counter(
    "spadcorr_frames_accumulated_total", "Nombre de trames accumulées dans les statistiques"
)
ACCUMULATE_DURATION = Histogram(
    "spadcorr_accumulate_duration_seconds", "Durée d'accumulation en secondes"
)

ORACLE_MAX_PIXELS = 32 * 32
ORACLE_MAX_FRAMES = 10_000
PAIR_BLOCKS = 8

# Ligne v: bits de l'octet v, bit de poids faible en premier (pixel 8·octet + b)
_BIT_TABLE = np.unpackbits(
    np.arange(256, dtype=np.uint8)[:, None], axis=1, bitorder="little"
).astype(bool)

logger = logging.getLogger(__name__)

FrameSource = FrameSet | str | Path | Iterable[np.ndarray]


@dataclass(frozen=True)
class AccumStats:
    """Statistiques suffisantes: N, marginales Sᵢ et coïncidences Cᵢⱼ (matrice symétrique)."""

    geometry: SensorGeometry
    n_frames: int
    marginal: np.ndarray
    pair_counts: np.ndarray
    pixels: np.ndarray | None = None

    @classmethod
    def empty(cls, geometry: SensorGeometry, pixels: np.ndarray | None = None) -> AccumStats:
        size = geometry.n_pixels if pixels is None else len(pixels)
        return cls(
            geometry,
            0,
            np.zeros(size, dtype=np.int64),
            np.zeros((size, size), dtype=np.int64),
            None if pixels is None else np.asarray(pixels, dtype=np.int64),
        )

    @property
    def pixel_ids(self) -> np.ndarray:
        """Indices plats (sur le capteur) des pixels suivis."""
        if self.pixels is None:
            return np.arange(self.geometry.n_pixels)
        return self.pixels

    @property
    def is_full(self) -> bool:
        return self.pixels is None

    def local_index(self, flat: np.ndarray | int) -> np.ndarray:
        """Indices plats du capteur → positions dans les tableaux de statistiques."""
        flat = np.asarray(flat, dtype=np.int64)
        if self.pixels is None:
            return flat
        lookup = np.full(self.geometry.n_pixels, -1, dtype=np.int64)
        lookup[self.pixels] = np.arange(len(self.pixels))
        local = lookup[flat]
        if np.any(local < 0):
            raise GeometryMismatchError("Pixel demandé absent des statistiques restreintes")
        return local

    def _check_compatible(self, other: AccumStats) -> None:
        if not self.geometry.same_layout(other.geometry):
            raise GeometryMismatchError(
                f"Géométries incompatibles: {self.geometry.shape} vs {other.geometry.shape}"
            )
        if not np.array_equal(self.pixel_ids, other.pixel_ids):
            raise GeometryMismatchError("Sous-ensembles de pixels différents")

    def __add__(self, other: AccumStats) -> AccumStats:
        self._check_compatible(other)
        return AccumStats(
            self.geometry,
            self.n_frames + other.n_frames,
            self.marginal + other.marginal,
            self.pair_counts + other.pair_counts,
            self.pixels,
        )

    def __sub__(self, other: AccumStats) -> AccumStats:
        """Complément (utilisé pour les rééchantillonnages leave-one-out)."""
        self._check_compatible(other)
        return AccumStats(
            self.geometry,
            self.n_frames - other.n_frames,
            self.marginal - other.marginal,
            self.pair_counts - other.pair_counts,
            self.pixels,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AccumStats):
            return NotImplemented
        return (
            self.geometry.same_layout(other.geometry)
            and self.n_frames == other.n_frames
            and np.array_equal(self.pixel_ids, other.pixel_ids)
            and np.array_equal(self.marginal, other.marginal)
            and np.array_equal(self.pair_counts, other.pair_counts)
        )

    __hash__ = None  # type: ignore[assignment]

    def check_invariants(self) -> dict:
        """Vérifie 0 ≤ Sᵢ ≤ N, Cᵢⱼ ≤ min(Sᵢ, Sⱼ), Cᵢᵢ = Sᵢ et la symétrie."""
        s, c = self.marginal, self.pair_counts
        report = {
            "marginal_in_range": bool(np.all((s >= 0) & (s <= self.n_frames))),
            "pairs_bounded": bool(np.all(c <= np.minimum.outer(s, s))),
            "diagonal_is_marginal": bool(np.array_equal(np.diag(c), s)),
            "symmetric": bool(np.array_equal(c, c.T)),
        }
        report["valid"] = all(report.values())
        return report


def merge_stats(stats: Sequence[AccumStats]) -> AccumStats:
    """Fusion par addition (associative et commutative)."""
    if not stats:
        raise ValueError("Aucune statistique à fusionner")
    total = stats[0]
    for item in stats[1:]:
        total = total + item
    return total


def _lit_matrix(
    payload: np.ndarray, n_pixels: int, pixels: np.ndarray | None
) -> tuple[sparse.csr_matrix, np.ndarray]:
    """Matrice creuse trames × pixels suivis, construite directement depuis les octets compactés.

    Returns:
        (matrice CSR int32, colonne de chaque pixel allumé)

    """
    n = len(payload)
    frame, byte = np.nonzero(payload)
    hit, bit = np.nonzero(_BIT_TABLE[payload[frame, byte]])
    frame = frame[hit]
    column = byte[hit].astype(np.int64) * 8 + bit
    keep = column < n_pixels
    size = n_pixels
    if pixels is not None:
        lookup = np.full(n_pixels, -1, dtype=np.int64)
        lookup[pixels] = np.arange(len(pixels))
        column = np.where(keep, lookup[np.minimum(column, n_pixels - 1)], -1)
        keep = column >= 0
        size = len(pixels)
    frame, column = frame[keep], column[keep]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(frame, minlength=n), out=indptr[1:])
    data = np.ones(len(column), dtype=np.int32)
    return sparse.csr_matrix((data, column, indptr), shape=(n, size)), column


def _pair_counts(lit: sparse.csr_matrix) -> np.ndarray:
    """Cᵢⱼ = litᵀ·lit calculé par blocs de colonnes, triangle supérieur seulement."""
    size = lit.shape[1]
    n_blocks = min(PAIR_BLOCKS, max(size // 64, 1))
    edges = np.linspace(0, size, n_blocks + 1).astype(int)
    columns = lit.tocsc()
    slices = [columns[:, lo:hi] for lo, hi in zip(edges[:-1], edges[1:])]
    rights = [block.tocsr() for block in slices]
    pairs = np.empty((size, size), dtype=np.int64)
    for a, left in enumerate(slices):
        rows = slice(edges[a], edges[a + 1])
        for b in range(a, n_blocks):
            cols = slice(edges[b], edges[b + 1])
            block = (left.T @ rights[b]).toarray()
            pairs[rows, cols] = block
            if b != a:
                pairs[cols, rows] = block.T
    return pairs


def _chunk_stats(
    payload: np.ndarray, n_pixels: int, pixels: np.ndarray | None
) -> tuple[int, np.ndarray, np.ndarray]:
    """Statistiques d'un bloc compacté: pour chaque trame, les k pixels allumés donnent k(k+1)/2 paires."""
    lit, column = _lit_matrix(payload, n_pixels, pixels)
    marginal = np.bincount(column, minlength=lit.shape[1]).astype(np.int64)
    return len(payload), marginal, _pair_counts(lit)


def _resolve_geometry(source: FrameSource, geometry: SensorGeometry | None) -> SensorGeometry | None:
    if isinstance(source, FrameSet):
        return source.geometry
    if isinstance(source, (str, Path)):
        return FrameReader(source).geometry
    return geometry


class _Accumulator:
    """Accumulateur privé (un par flux ou par worker)."""

    def __init__(self, geometry: SensorGeometry | None, pixels: np.ndarray | None):
        self.geometry = geometry
        self.pixels = None if pixels is None else np.asarray(pixels, dtype=np.int64)
        self.stats: AccumStats | None = None if geometry is None else AccumStats.empty(
            geometry, self.pixels
        )

    def check(self, chunk: np.ndarray) -> None:
        if chunk.ndim == 3 and self.geometry is None:
            self.adopt(SensorGeometry(height=chunk.shape[1], width=chunk.shape[2]))
        if chunk.ndim != 3 or self.geometry is None or chunk.shape[1:] != self.geometry.shape:
            raise GeometryMismatchError(
                f"Trame de forme {chunk.shape[1:]} pour une géométrie {self.geometry.shape}"
            )

    def adopt(self, geometry: SensorGeometry) -> None:
        if self.stats is None:
            self.geometry = geometry
            self.stats = AccumStats.empty(geometry, self.pixels)

    @property
    def n_pixels(self) -> int:
        assert self.geometry is not None
        return self.geometry.n_pixels

    def add(self, n: int, marginal: np.ndarray, pairs: np.ndarray) -> None:
        assert self.stats is not None
        self.stats = AccumStats(
            self.stats.geometry,
            self.stats.n_frames + n,
            self.stats.marginal + marginal,
            self.stats.pair_counts + pairs,
            self.stats.pixels,
        )

    def result(self) -> AccumStats:
        if self.stats is None:
            raise ValueError("Flux vide et géométrie inconnue")
        return self.stats


def _packed_chunks(frames: FrameSource, chunk_size: int, acc: _Accumulator) -> Iterator[np.ndarray]:
    """Blocs d'octets compactés; les itérables de trames décodées sont vérifiés puis compactés."""
    if isinstance(frames, FrameSet):
        yield from frames.packed_chunks(chunk_size)
    elif isinstance(frames, (str, Path)):
        yield from FrameReader(frames).packed_chunks(chunk_size)
    else:
        for chunk in iter_chunks(frames, chunk_size):
            acc.check(chunk)
            yield pack_frames(chunk)


@ACCUMULATE_DURATION.time()
def accumulate(
    frames: FrameSource,
    geometry: SensorGeometry | None = None,
    pixels: np.ndarray | None = None,
    workers: int = 1,
    chunk_size: int = 65536,
    progress: bool = False,
) -> AccumStats:
    """Accumule les statistiques entières d'un flux de trames.

    Args:
        frames: FrameSet, chemin SPF1 ou itérable de blocs (N, H, W)
        geometry: Géométrie attendue (déduite du premier bloc si absente)
        pixels: Sous-ensemble d'indices plats à suivre (tous par défaut)
        workers: Nombre de processus; chaque bloc donne des statistiques privées
        chunk_size: Taille des blocs lus depuis un FrameSet ou un fichier
        progress: Afficher une barre de progression

    Returns:
        AccumStats exactes, identiques quel que soit le découpage

    """
    acc = _Accumulator(_resolve_geometry(frames, geometry), pixels)
    bar = tqdm(unit="trame", disable=not progress, desc="accumulation")

    def consume(result: tuple[int, np.ndarray, np.ndarray]) -> None:
        acc.add(*result)
        bar.update(result[0])

    try:
        if workers <= 1:
            for payload in _packed_chunks(frames, chunk_size, acc):
                consume(_chunk_stats(payload, acc.n_pixels, acc.pixels))
        else:
            window: list[Future] = []
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for payload in _packed_chunks(frames, chunk_size, acc):
                    window.append(pool.submit(_chunk_stats, payload, acc.n_pixels, acc.pixels))
                    if len(window) >= 2 * workers:
                        consume(window.pop(0).result())
                for future in window:
                    consume(future.result())
    finally:
        bar.close()

    stats = acc.result()
    FRAMES_ACCUMULATED.inc(stats.n_frames)
    logger.info(f"🧮 Accumulation terminée: N={stats.n_frames}, {len(stats.marginal)} pixels")
    return stats


def _split_at(
    chunks: Iterable[np.ndarray], boundaries: Sequence[int]
) -> Iterator[tuple[int, np.ndarray]]:
    """Découpe un flux de blocs aux frontières données; produit (segment, sous-bloc)."""
    position = 0
    segment = 0
    for chunk in chunks:
        start = 0
        while start < len(chunk):
            while segment < len(boundaries) and boundaries[segment] <= position:
                segment += 1
            limit = boundaries[segment] if segment < len(boundaries) else position + len(chunk)
            take = min(len(chunk) - start, limit - position)
            yield segment, chunk[start : start + take]
            start += take
            position += take


def _frame_count(frames: FrameSource, n_frames: int | None) -> int:
    if isinstance(frames, FrameSet):
        return frames.n_frames
    if isinstance(frames, (str, Path)):
        return FrameReader(frames).n_frames
    if n_frames is None:
        raise ValueError("n_frames requis pour un itérable de blocs")
    return n_frames


def accumulate_blocks(
    frames: FrameSource,
    n_blocks: int = 20,
    geometry: SensorGeometry | None = None,
    pixels: np.ndarray | None = None,
    n_frames: int | None = None,
    chunk_size: int = 65536,
) -> list[AccumStats]:
    """Statistiques par blocs contigus de trames (entrée du jackknife)."""
    total = _frame_count(frames, n_frames)
    if n_blocks < 1:
        raise ValueError("n_blocks doit être >= 1")
    n_blocks = min(n_blocks, max(total, 1))
    boundaries = [(k * total) // n_blocks for k in range(1, n_blocks)]
    accs = [_Accumulator(_resolve_geometry(frames, geometry), pixels) for _ in range(n_blocks)]
    guard = accs[0]
    for segment, payload in _split_at(_packed_chunks(frames, chunk_size, guard), boundaries):
        assert guard.geometry is not None
        accs[segment].adopt(guard.geometry)
        accs[segment].add(*_chunk_stats(payload, guard.n_pixels, guard.pixels))
    if guard.geometry is None:
        raise ValueError("Flux vide et géométrie inconnue")
    blocks = []
    for acc in accs:
        acc.adopt(guard.geometry)
        blocks.append(acc.result())
    FRAMES_ACCUMULATED.inc(sum(b.n_frames for b in blocks))
    logger.info(f"🧮 Accumulation en {n_blocks} blocs: N={total}")
    return blocks


def accumulate_prefixes(
    frames: FrameSource,
    checkpoints: Sequence[int],
    on_checkpoint: Callable[[AccumStats], None],
    geometry: SensorGeometry | None = None,
    chunk_size: int = 65536,
) -> list[int]:
    """Parcourt le flux une seule fois et appelle ``on_checkpoint`` sur chaque préfixe.

    Returns:
        Liste des checkpoints effectivement atteints

    """
    checkpoints = list(checkpoints)
    if checkpoints != sorted(checkpoints):
        raise ValueError("Les checkpoints doivent être croissants")
    acc = _Accumulator(_resolve_geometry(frames, geometry), None)
    reached = []
    pending = list(checkpoints)
    for _, payload in _split_at(_packed_chunks(frames, chunk_size, acc), checkpoints):
        acc.add(*_chunk_stats(payload, acc.n_pixels, None))
        while pending and acc.result().n_frames == pending[0]:
            reached.append(pending.pop(0))
            on_checkpoint(acc.result())
    for missing in pending:
        logger.warning(f"⚠️  Checkpoint N={missing} non atteint (flux trop court)")
    return reached


class JpdView:
    """Accès en lecture à Γ dérivé d'une AccumStats."""

    def __init__(self, stats: AccumStats, correction: str = "linear", scale: float = 1.0):
        """Initialise la vue.

        Args:
            stats: Statistiques accumulées
            correction: "linear" (estimateur standard) ou "log" (formule exacte)
            scale: Coefficient A du mode "log"

        """
        if stats.n_frames == 0:
            raise ValueError("Γ indéfini pour N = 0")
        if correction not in ("linear", "log"):
            raise ValueError(f"Correction inconnue: {correction}")
        self.stats = stats
        self.correction = correction
        self.scale = scale

    @property
    def n_frames(self) -> int:
        return self.stats.n_frames

    def gamma(self, i: int, j: int) -> float:
        """Γ(rᵢ, rⱼ) pour des indices plats du capteur."""
        li, lj = (int(k) for k in self.stats.local_index(np.array([i, j])))
        n = self.stats.n_frames
        c = int(self.stats.pair_counts[li, lj])
        si, sj = int(self.stats.marginal[li]), int(self.stats.marginal[lj])
        linear = c / n - (si * sj) / (n * n)
        if self.correction == "linear":
            return linear
        return float(self._log_correct(np.array(linear), np.array(si / n), np.array(sj / n)))

    def matrix(self) -> np.ndarray:
        """Matrice Γ complète sur les pixels suivis."""
        n = self.stats.n_frames
        s = self.stats.marginal
        linear = self.stats.pair_counts / n - np.outer(s, s) / (n * n)
        if self.correction == "linear":
            return linear
        p = s / n
        return self._log_correct(linear, p[:, None], p[None, :])

    def row(self, i: int) -> np.ndarray:
        """Γ(rᵢ, ·) sur les pixels suivis."""
        li = int(self.stats.local_index(i))
        n = self.stats.n_frames
        s = self.stats.marginal
        linear = self.stats.pair_counts[li] / n - (s[li] * s) / (n * n)
        if self.correction == "linear":
            return linear
        p = s / n
        return self._log_correct(linear, p[li], p)

    def _log_correct(self, linear: np.ndarray, pi: np.ndarray, pj: np.ndarray) -> np.ndarray:
        # Γ = A ln(1 + cov / ((1 − ⟨Iᵢ⟩)(1 − ⟨Iⱼ⟩)))
        denom = (1 - pi) * (1 - pj)
        ratio = np.divide(linear, denom, out=np.zeros(np.broadcast(linear, denom).shape),
                          where=denom > 0)
        out = np.full(ratio.shape, np.nan)
        np.log1p(ratio, out=out, where=ratio > -1)
        return self.scale * out


def jpd_element(stats: AccumStats, i: int, j: int) -> float:
    """Fonction utilitaire: Γ(rᵢ, rⱼ) = Cᵢⱼ/N − SᵢSⱼ/N²."""
    return JpdView(stats).gamma(i, j)


def intensity_image(stats: AccumStats) -> np.ndarray:
    """Intensité moyenne S/N sur la grille du capteur."""
    if not stats.is_full:
        raise GeometryMismatchError("Image d'intensité indisponible sur un sous-ensemble")
    return (stats.marginal / max(stats.n_frames, 1)).reshape(stats.geometry.shape)


def oracle_jpd(frames: FrameSet) -> np.ndarray:
    """Évaluation directe en double boucle de Γ (vérification, petites entrées seulement)."""
    geom = frames.geometry
    if geom.n_pixels > ORACLE_MAX_PIXELS or frames.n_frames > ORACLE_MAX_FRAMES:
        raise OracleSizeError(
            f"Oracle limité à {ORACLE_MAX_PIXELS} pixels et {ORACLE_MAX_FRAMES} trames "
            f"(reçu {geom.n_pixels} pixels, {frames.n_frames} trames)"
        )
    n = frames.n_frames
    if n == 0:
        raise ValueError("Γ indéfini pour N = 0")
    columns = frames.frames().reshape(n, -1).astype(np.int64).T
    sums = [int(col.sum()) for col in columns]
    size = len(columns)
    gamma = np.empty((size, size))
    for i in range(size):
        for j in range(i, size):
            coinc = int(np.dot(columns[i], columns[j]))
            value = coinc / n - (sums[i] * sums[j]) / (n * n)
            gamma[i, j] = gamma[j, i] = value
    return gamma
