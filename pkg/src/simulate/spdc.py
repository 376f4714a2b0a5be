"""Simulateur de paires SPDC détectées par une caméra SPAD binaire.

Modèle double-gaussien: en position, centre de naissance r0 sous l'enveloppe
de pompe et écart relatif dr de largeur delta_r_true; en impulsion, somme
k1+k2 de largeur delta_k_true et différence k1-k2 de largeur delta_k_minus.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from prometheus_client import Counter
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from src.extract.frame_io import FrameSet, FrameWriter, SensorGeometry, pack_frames

# Taille fixe des blocs de graine: la sortie ne dépend ni du découpage ni des workers.
BLOCK_FRAMES = 1024

FRAMES_SIMULATED = Counter(
    "spadcorr_frames_simulated_total", "Nombre de trames simulées", ["mode"]
)

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    """Configuration optique: champ proche (position) ou champ lointain (impulsion)."""

    NF = "NF"
    FF = "FF"


def fourier_scale(
    f1_mm: float = 35.0, f2_mm: float = 100.0, f3_mm: float = 200.0, wavelength_nm: float = 694.0
) -> float:
    """Échelle de Fourier (rad/µm par µm sur le capteur) du montage à trois lentilles."""
    k0 = 2 * math.pi / (wavelength_nm * 1e-3)  # rad/µm
    focal_um = f1_mm * f3_mm / f2_mm * 1e3
    return k0 / focal_um


class SourceParams(BaseModel):
    """Paramètres de la source de paires (µm, rad/µm, nm)."""

    model_config = ConfigDict(frozen=True)

    sigma_pump: float = Field(default=350.0, gt=0)
    delta_r_true: float = Field(default=4.3, gt=0)
    delta_k_true: float = Field(default=1.0666e-2, gt=0)
    delta_k_minus: float | None = Field(default=None, gt=0)
    mean_pairs_per_frame: float = Field(default=234.0, ge=0)
    wavelength: float = Field(default=694.0, gt=0)
    separable: bool = False

    @model_validator(mode="after")
    def _check_epr_product(self) -> SourceParams:
        if not self.separable and self.delta_r_true * self.delta_k_true >= 0.5:
            raise ValueError(
                "Source intriquée: delta_r_true × delta_k_true doit être < 1/2 "
                f"(reçu {self.delta_r_true * self.delta_k_true:.4g})"
            )
        return self

    @property
    def momentum_difference_width(self) -> float:
        """Écart-type de k1-k2 par axe (conjugué de la largeur en position)."""
        return self.delta_k_minus if self.delta_k_minus is not None else 1.0 / self.delta_r_true

    @property
    def single_photon_momentum_width(self) -> float:
        return math.hypot(self.delta_k_true, self.momentum_difference_width) / 2


class DetectorParams(BaseModel):
    """Paramètres du détecteur et de l'optique de projection."""

    model_config = ConfigDict(frozen=True)

    quantum_efficiency: float = Field(default=0.09, ge=0, le=1)
    fill_factor: float = Field(default=0.80, ge=0, le=1)
    # 0.14 coups/pixel/s × 10 ns d'exposition
    dark_count_prob: float = Field(default=0.14 * 10e-9, ge=0, le=1)
    magnification_nf: float = Field(default=300.0 / 35.0, gt=0)
    fourier_scale_ff: float = Field(default_factory=fourier_scale, gt=0)

    @property
    def detection_probability(self) -> float:
        return self.quantum_efficiency * self.fill_factor

    def calibration(self, mode: Mode, geometry: SensorGeometry) -> float:
        """Unités physiques (plan du cristal) par pixel: µm en NF, rad/µm en FF."""
        if Mode(mode) is Mode.NF:
            return geometry.pixel_pitch / self.magnification_nf
        return geometry.pixel_pitch * self.fourier_scale_ff


def published_source(**overrides: object) -> SourceParams:
    """Source aux valeurs publiées (pompe 0.7 mm, Δr = 4.3 µm, Δk = 1.0666e-2 rad/µm)."""
    return SourceParams(**overrides)


def published_detector(**overrides: object) -> DetectorParams:
    """Détecteur aux valeurs publiées (QE 9 %, remplissage 80 %, f = 35/100/200/300 mm)."""
    return DetectorParams(**overrides)


@dataclass(frozen=True)
class PairBatch:
    """Paires générées, en tableaux (n, 2) par grandeur."""

    r0: np.ndarray
    dr: np.ndarray
    k1: np.ndarray
    k2: np.ndarray
    frame_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.r0)

    @property
    def r1(self) -> np.ndarray:
        return self.r0 + self.dr / 2

    @property
    def r2(self) -> np.ndarray:
        return self.r0 - self.dr / 2


def _draw_pairs(src: SourceParams, n_pairs: int, rng: np.random.Generator) -> PairBatch:
    pump_std = src.sigma_pump / 2
    if src.separable:
        r1 = rng.normal(0.0, pump_std, size=(n_pairs, 2))
        r2 = rng.normal(0.0, pump_std, size=(n_pairs, 2))
        marginal = src.single_photon_momentum_width
        k1 = rng.normal(0.0, marginal, size=(n_pairs, 2))
        k2 = rng.normal(0.0, marginal, size=(n_pairs, 2))
        return PairBatch(r0=(r1 + r2) / 2, dr=r1 - r2, k1=k1, k2=k2)

    r0 = rng.normal(0.0, pump_std, size=(n_pairs, 2))
    dr = rng.normal(0.0, src.delta_r_true, size=(n_pairs, 2))
    k_sum = rng.normal(0.0, src.delta_k_true, size=(n_pairs, 2))
    k_diff = rng.normal(0.0, src.momentum_difference_width, size=(n_pairs, 2))
    return PairBatch(r0=r0, dr=dr, k1=(k_sum + k_diff) / 2, k2=(k_sum - k_diff) / 2)


def sample_pairs(src: SourceParams, n_pairs: int, rng_seed: int) -> PairBatch:
    """Tire ``n_pairs`` paires de photons, de façon déterministe pour une graine donnée."""
    if n_pairs < 0:
        raise ValueError("n_pairs doit être >= 0")
    batch = _draw_pairs(src, n_pairs, np.random.default_rng(rng_seed))
    return PairBatch(batch.r0, batch.dr, batch.k1, batch.k2, np.zeros(n_pairs, dtype=np.int64))


def _to_pixels(
    coords: np.ndarray, det: DetectorParams, geom: SensorGeometry, mode: Mode
) -> tuple[np.ndarray, np.ndarray]:
    """Coordonnées physiques (µm ou rad/µm) → indices (ligne, colonne), axe optique centré."""
    if mode is Mode.NF:
        sensor = coords * det.magnification_nf
    else:
        sensor = coords / det.fourier_scale_ff
    col = np.floor(sensor[:, 0] / geom.pixel_pitch + geom.width / 2).astype(np.int64)
    row = np.floor(sensor[:, 1] / geom.pixel_pitch + geom.height / 2).astype(np.int64)
    return row, col


@dataclass
class DetectionLedger:
    """Comptabilité des paires générées et détectées."""

    generated_pairs: int = 0
    detected_pairs: int = 0
    split_pairs: int = 0
    lit_pixels: int = 0

    def __iadd__(self, other: DetectionLedger) -> DetectionLedger:
        self.generated_pairs += other.generated_pairs
        self.detected_pairs += other.detected_pairs
        self.split_pairs += other.split_pairs
        self.lit_pixels += other.lit_pixels
        return self


def _detect(
    pairs: PairBatch,
    n_frames: int,
    det: DetectorParams,
    geom: SensorGeometry,
    mode: Mode,
    rng: np.random.Generator,
) -> tuple[np.ndarray, DetectionLedger]:
    n_pairs = len(pairs)
    frames = np.zeros((n_frames, geom.n_pixels), dtype=bool)

    if mode is Mode.NF:
        photons = np.concatenate([pairs.r1, pairs.r2])
    else:
        photons = np.concatenate([pairs.k1, pairs.k2])
    frame_of = np.concatenate([pairs.frame_index, pairs.frame_index])

    survives = rng.random(2 * n_pairs) < det.detection_probability
    row, col = _to_pixels(photons, det, geom, mode)
    inside = (row >= 0) & (row < geom.height) & (col >= 0) & (col < geom.width)
    kept = survives & inside
    flat = row * geom.width + col
    frames[frame_of[kept], flat[kept]] = True

    both = kept[:n_pairs] & kept[n_pairs:]
    ledger = DetectionLedger(
        generated_pairs=n_pairs,
        detected_pairs=int(both.sum()),
        split_pairs=int((both & (flat[:n_pairs] != flat[n_pairs:])).sum()),
    )

    if det.dark_count_prob > 0:
        population = n_frames * geom.n_pixels
        n_dark = int(rng.binomial(population, det.dark_count_prob))
        if n_dark:
            lit = rng.choice(population, size=n_dark, replace=False)
            frames.reshape(-1)[lit] = True

    ledger.lit_pixels = int(frames.sum())
    return frames.reshape(n_frames, *geom.shape), ledger


def detect_frame(
    pairs: PairBatch,
    det: DetectorParams,
    geom: SensorGeometry,
    mode: Mode | str,
    rng_seed: int,
) -> np.ndarray:
    """Projette les paires d'une exposition sur une trame binaire (H, W).

    Un pixel touché plusieurs fois vaut 1 (OU logique).
    """
    single = PairBatch(pairs.r0, pairs.dr, pairs.k1, pairs.k2, np.zeros(len(pairs), np.int64))
    frames, _ = _detect(single, 1, det, geom, Mode(mode), np.random.default_rng(rng_seed))
    return frames[0]


def _block_rng(rng_seed: int, block_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(rng_seed, spawn_key=(block_index,)))


def _simulate_block(
    args: tuple[SourceParams, DetectorParams, SensorGeometry, Mode, int, int, int],
) -> tuple[np.ndarray, DetectionLedger]:
    src, det, geom, mode, rng_seed, block_index, n_frames = args
    rng = _block_rng(rng_seed, block_index)
    counts = rng.poisson(src.mean_pairs_per_frame, size=n_frames)
    batch = _draw_pairs(src, int(counts.sum()), rng)
    pairs = PairBatch(
        batch.r0, batch.dr, batch.k1, batch.k2, np.repeat(np.arange(n_frames), counts)
    )
    frames, ledger = _detect(pairs, n_frames, det, geom, mode, rng)
    return pack_frames(frames), ledger


class SPDCSimulator:
    """Générateur de runs de trames SPAD."""

    def __init__(
        self,
        src: SourceParams,
        det: DetectorParams,
        geom: SensorGeometry,
        mode: Mode | str,
        rng_seed: int = 0,
        workers: int = 1,
        progress: bool = False,
    ):
        self.src = src
        self.det = det
        self.geom = geom
        self.mode = Mode(mode)
        self.rng_seed = rng_seed
        self.workers = max(1, workers)
        self.progress = progress
        self.ledger = DetectionLedger()

    @property
    def source_tag(self) -> str:
        return (
            f"spdc-sim mode={self.mode.value} seed={self.rng_seed} "
            f"source={self.src.model_dump_json()} detector={self.det.model_dump_json()} "
            f"geometry={self.geom.model_dump_json()}"
        )

    def _blocks(self, n_frames: int) -> Iterator[tuple[np.ndarray, DetectionLedger]]:
        tasks = [
            (self.src, self.det, self.geom, self.mode, self.rng_seed, b,
             min(BLOCK_FRAMES, n_frames - b * BLOCK_FRAMES))
            for b in range(-(-n_frames // BLOCK_FRAMES))
        ]
        bar = tqdm(total=n_frames, unit="trame", disable=not self.progress, desc="simulation")
        try:
            if self.workers == 1 or len(tasks) < 2:
                results: Iterator = map(_simulate_block, tasks)
                for result in results:
                    bar.update(len(result[0]))
                    yield result
            else:
                with ProcessPoolExecutor(max_workers=self.workers) as pool:
                    for result in pool.map(_simulate_block, tasks, chunksize=4):
                        bar.update(len(result[0]))
                        yield result
        finally:
            bar.close()

    def run(self, n_frames: int) -> FrameSet:
        """Simule ``n_frames`` trames en mémoire."""
        if n_frames < 0:
            raise ValueError("n_frames doit être >= 0")
        logger.info(
            f"🎲 Simulation {self.mode.value}: {n_frames} trames, "
            f"µ={self.src.mean_pairs_per_frame} paires/trame, graine {self.rng_seed}"
        )
        self.ledger = DetectionLedger()
        payloads = []
        for payload, ledger in self._blocks(n_frames):
            payloads.append(payload)
            self.ledger += ledger
        if not payloads:
            return FrameSet.empty(self.geom, self.source_tag)

        FRAMES_SIMULATED.labels(mode=self.mode.value).inc(n_frames)
        payload = np.concatenate(payloads)
        logger.info(
            f"✅ Simulation terminée: {self.ledger.lit_pixels / n_frames:.2f} pixels allumés/trame"
        )
        return FrameSet(self.geom, n_frames, payload, self.source_tag)

    def run_to_file(self, path: str | Path, n_frames: int) -> Path:
        """Simule directement vers un fichier SPF1 sans garder le run en mémoire."""
        if n_frames < 0:
            raise ValueError("n_frames doit être >= 0")
        logger.info(f"🎲 Simulation {self.mode.value} vers {path}: {n_frames} trames")
        self.ledger = DetectionLedger()
        with FrameWriter(path, self.geom, self.source_tag) as writer:
            for payload, ledger in self._blocks(n_frames):
                writer.append_packed(payload)
                self.ledger += ledger
        FRAMES_SIMULATED.labels(mode=self.mode.value).inc(n_frames)
        return Path(path)


def simulate_run(
    src: SourceParams,
    det: DetectorParams,
    geom: SensorGeometry,
    mode: Mode | str,
    n_frames: int,
    rng_seed: int,
    workers: int = 1,
) -> FrameSet:
    """Fonction utilitaire: simule un FrameSet complet."""
    return SPDCSimulator(src, det, geom, mode, rng_seed, workers).run(n_frames)


def mix_runs(
    entangled: FrameSet, separable: FrameSet, fraction: float, rng_seed: int
) -> FrameSet:
    """Remplace une fraction des trames intriquées par des trames séparables."""
    if not 0 <= fraction <= 1:
        raise ValueError("fraction doit être dans [0, 1]")
    if entangled.n_frames != separable.n_frames or not entangled.geometry.same_layout(
        separable.geometry
    ):
        raise ValueError("Les deux runs doivent avoir même taille et même géométrie")
    rng = np.random.default_rng(rng_seed)
    n_swap = int(round(fraction * entangled.n_frames))
    swap = np.zeros(entangled.n_frames, dtype=bool)
    swap[rng.choice(entangled.n_frames, size=n_swap, replace=False)] = True
    payload = np.where(swap[:, None], separable.payload, entangled.payload)
    return FrameSet(
        entangled.geometry,
        entangled.n_frames,
        payload,
        f"mix fraction={fraction} seed={rng_seed}",
    )
