"""Témoin de dimensionnalité: fidélité F̃ = F₁ + F̃₂ et bornes B_r = r/d.

Convention de normalisation: F(Φ, Φ) = 1 pour l'état maximalement intriqué,
avec F₁ = (1/d) Σ_m ⟨mm|ρ|mm⟩ et
F̃₂ = Σ_p ⟨p̃p̃|ρ|p̃p̃⟩ − 1/d − (1/d) Σ' √(⟨mn|ρ|mn⟩⟨m'n'|ρ|m'n'⟩),
la somme primée portant sur n' ≡ m' + n − m (mod d) avec
m ≠ n', m ≠ n, n ≠ n', n' ≠ m'.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from prometheus_client import Histogram
from pydantic import BaseModel, ConfigDict

from src.analysis.resampling import jackknife_se, leave_one_out
from src.transform.jpd import AccumStats
from src.utils.exceptions import GridError
from src.witness.grid import ModeGrid, horizontal_neighbor

POSITION = "position"
MOMENTUM = "momentum"
CONVENTION = "F(Φ,Φ)=1: F1=(1/d)Σ⟨mm|ρ|mm⟩; F2~=Σ⟨p~p~|ρ|p~p~⟩−1/d−(1/d)Σ'√(..)"

WITNESS_DURATION = Histogram(
    "spadcorr_witness_duration_seconds", "Durée du calcul du témoin (hors accumulation)"
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Estimate:
    value: float
    uncertainty: float = 0.0


@dataclass(frozen=True)
class CoincidenceMatrix:
    """Matrice de coïncidences d×d dans une base, avec ses répliques leave-one-out."""

    counts: np.ndarray
    basis: str
    grid: ModeGrid | None = None
    replicates: tuple[np.ndarray, ...] = ()
    relabeling: str = "none"
    n_frames: int = 0

    def __post_init__(self) -> None:
        if self.basis not in (POSITION, MOMENTUM):
            raise ValueError(f"Base inconnue: {self.basis}")
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError(f"Matrice carrée attendue, reçu {self.counts.shape}")

    @property
    def d(self) -> int:
        return self.counts.shape[0]

    @staticmethod
    def _normalize(counts: np.ndarray) -> np.ndarray:
        total = counts.sum()
        if total <= 0:
            return np.zeros_like(counts, dtype=np.float64)
        return counts / total

    @property
    def normalized(self) -> np.ndarray:
        """⟨mn|ρ|mn⟩ = N_mn / Σ N_kl."""
        return self._normalize(self.counts)

    def normalized_replicates(self) -> list[np.ndarray]:
        return [self._normalize(rep) for rep in self.replicates]

    def diagonal_mass(self) -> float:
        return float(np.trace(self.normalized))

    def to_csv(self, path: str | Path) -> Path:
        """Export CSV long (m, n, count) précédé d'une ligne d'en-tête commentée."""
        path = Path(path)
        header = [f"basis={self.basis}", f"d={self.d}", f"relabeling={self.relabeling}",
                  f"n_frames={self.n_frames}"]
        if self.grid is not None:
            header += [
                f"side={self.grid.side}",
                f"spacing={self.grid.spacing}",
                f"origin={self.grid.origin[0]},{self.grid.origin[1]}",
                f"sensor={self.grid.sensor_shape[0]},{self.grid.sensor_shape[1]}",
            ]
        m, n = np.indices(self.counts.shape)
        frame = pd.DataFrame({"m": m.ravel(), "n": n.ravel(), "count": self.counts.ravel()})
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write("# " + " ".join(header) + "\n")
            frame.to_csv(fh, index=False, float_format="%.17g")
        return path

    @classmethod
    def from_csv(cls, path: str | Path) -> CoincidenceMatrix:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Fichier non trouvé: {path}")
        with path.open(encoding="utf-8") as fh:
            first = fh.readline()
        if not first.startswith("#"):
            raise ValueError(f"En-tête de matrice absent dans {path}")
        meta = dict(item.split("=", 1) for item in first[1:].split())
        frame = pd.read_csv(path, comment="#", float_precision="round_trip")
        d = int(meta["d"])
        counts = np.zeros((d, d))
        counts[frame["m"].to_numpy(), frame["n"].to_numpy()] = frame["count"].to_numpy()
        grid = None
        if "side" in meta:
            origin = tuple(int(v) for v in meta["origin"].split(","))
            sensor = tuple(int(v) for v in meta["sensor"].split(","))
            grid = ModeGrid(int(meta["side"]), int(meta["spacing"]), origin, sensor)
        return cls(counts, meta["basis"], grid, (), meta.get("relabeling", "none"),
                   int(meta.get("n_frames", 0)))


def _partner_pixels(grid: ModeGrid, basis: str) -> tuple[np.ndarray, np.ndarray]:
    """Pixels (photon 1, photon 2) de chaque entrée (m, n).

    Les paires confondues dans un même pixel (diagonale en position, pixel
    réfléchi sur lui-même en impulsion) sont lues sur le voisin horizontal.
    """
    first = np.broadcast_to(grid.pixels[:, None], (grid.d, grid.d))
    second = grid.pixels if basis == POSITION else grid.reflected()
    second = np.broadcast_to(second[None, :], (grid.d, grid.d))
    same = first == second
    second = np.where(same, horizontal_neighbor(second, grid.sensor_shape[1]), second)
    return first, second


def _scaled_counts(stats: AccumStats, grid: ModeGrid, basis: str) -> np.ndarray:
    """N·Γ sur la grille, valeurs négatives ramenées à zéro."""
    if stats.geometry.shape != grid.sensor_shape:
        raise GridError(
            f"Grille définie sur {grid.sensor_shape}, statistiques sur {stats.geometry.shape}"
        )
    n = stats.n_frames
    if n == 0:
        return np.zeros((grid.d, grid.d))
    first, second = _partner_pixels(grid, basis)
    try:
        li = stats.local_index(first)
        lj = stats.local_index(second)
    except ValueError as exc:
        raise GridError(f"Statistiques incomplètes pour la grille: {exc}") from exc
    s = stats.marginal
    counts = stats.pair_counts[li, lj] - s[li] * s[lj] / n
    return np.clip(counts, 0.0, None)


def coincidence_matrix(
    stats: AccumStats | Sequence[AccumStats], grid: ModeGrid, basis: str
) -> CoincidenceMatrix:
    """Construit la matrice de coïncidences N_mn (position) ou Ñ_pv (impulsion).

    Args:
        stats: Statistiques totales, ou liste de statistiques par blocs
            (fournit alors les répliques leave-one-out)
        grid: Grille de modes (la même pour les deux bases)
        basis: "position" (NF) ou "momentum" (FF)

    """
    if basis not in (POSITION, MOMENTUM):
        raise ValueError(f"Base inconnue: {basis}")
    relabeling = "none" if basis == POSITION else "point-reflection"
    if isinstance(stats, AccumStats):
        counts = _scaled_counts(stats, grid, basis)
        return CoincidenceMatrix(counts, basis, grid, (), relabeling, stats.n_frames)

    total, complements = leave_one_out(list(stats))
    counts = _scaled_counts(total, grid, basis)
    replicates = tuple(_scaled_counts(rep, grid, basis) for rep in complements)
    if len(replicates) < 2:
        replicates = ()
    return CoincidenceMatrix(counts, basis, grid, replicates, relabeling, total.n_frames)


def gamma(m: int, n: int, m2: int, n2: int, d: int) -> float:
    """Préfacteur γ_{m n m' n'} = 1/d si (m − m' − n + n') ≡ 0 (mod d), sinon 0."""
    return 1.0 / d if (m - m2 - n + n2) % d == 0 else 0.0


def admissible_quadruples(d: int, constrained: bool = False) -> np.ndarray:
    """Énumération brute des quadruplets à γ non nul (tableau (k, 4)).

    Avec ``constrained``, applique m ≠ n', m ≠ n, n ≠ n', n' ≠ m'.
    """
    m, n, m2, n2 = np.indices((d, d, d, d)).reshape(4, -1)
    keep = (m - m2 - n + n2) % d == 0
    if constrained:
        keep &= (m != n2) & (m != n) & (n != n2) & (n2 != m2)
    return np.column_stack([m[keep], n[keep], m2[keep], n2[keep]])


def cross_term(normalized: np.ndarray) -> float:
    """Σ' γ √(⟨mn|ρ|mn⟩⟨m'n'|ρ|m'n'⟩) en O(d³): n' est fixé par (m, n, m')."""
    d = normalized.shape[0]
    root = np.sqrt(np.clip(normalized, 0.0, None))
    n = np.arange(d)[:, None]
    m2 = np.arange(d)[None, :]
    partials = np.empty(d)
    for m in range(d):
        n2 = (m2 + n - m) % d
        keep = (n2 != m) & (n != m) & (n != n2) & (n2 != m2)
        partials[m] = np.sum(root[m, n] * root[m2, n2] * keep)
    return float(partials.sum()) / d


def _f1_value(pos: np.ndarray) -> float:
    return float(np.trace(pos)) / pos.shape[0]


def _f2_value(pos: np.ndarray, mom: np.ndarray) -> float:
    d = pos.shape[0]
    return float(np.trace(mom)) - 1.0 / d - cross_term(pos)


def compute_F1(pos: CoincidenceMatrix) -> Estimate:
    """F₁ = (1/d) Σ_m ⟨mm|ρ|mm⟩, incertitude jackknife sur les répliques."""
    if pos.basis != POSITION:
        raise ValueError("F₁ se calcule sur la base position")
    value = _f1_value(pos.normalized)
    uncertainty = jackknife_se([_f1_value(r) for r in pos.normalized_replicates()])
    return Estimate(value, uncertainty)


def _check_pair(pos: CoincidenceMatrix, mom: CoincidenceMatrix) -> None:
    if pos.basis != POSITION or mom.basis != MOMENTUM:
        raise ValueError("Attendu une matrice position puis une matrice impulsion")
    if pos.d != mom.d:
        raise GridError(f"Dimensions différentes: {pos.d} et {mom.d}")
    if pos.grid is not None and mom.grid is not None and pos.grid != mom.grid:
        raise GridError("Les deux bases doivent utiliser la même grille")


def _paired_replicates(
    pos: CoincidenceMatrix, mom: CoincidenceMatrix
) -> list[tuple[np.ndarray, np.ndarray]]:
    pos_reps, mom_reps = pos.normalized_replicates(), mom.normalized_replicates()
    if len(pos_reps) != len(mom_reps):
        logger.warning("⚠️  Nombres de répliques différents: incertitude non estimée")
        return []
    return list(zip(pos_reps, mom_reps, strict=True))


def compute_F2_lower(pos: CoincidenceMatrix, mom: CoincidenceMatrix) -> Estimate:
    """Borne inférieure F̃₂ du terme de cohérence."""
    _check_pair(pos, mom)
    value = _f2_value(pos.normalized, mom.normalized)
    reps = [_f2_value(p, q) for p, q in _paired_replicates(pos, mom)]
    return Estimate(value, jackknife_se(reps) if reps else 0.0)


def ideal_matrices(d: int) -> tuple[CoincidenceMatrix, CoincidenceMatrix]:
    """Matrices diagonales sans bruit (état maximalement intriqué)."""
    if d < 2:
        raise ValueError("d doit être >= 2")
    identity = np.eye(d)
    return (
        CoincidenceMatrix(identity.copy(), POSITION),
        CoincidenceMatrix(identity.copy(), MOMENTUM, relabeling="point-reflection"),
    )


class WitnessReport(BaseModel):
    """Résultat de certification de la dimensionnalité d'intrication."""

    model_config = ConfigDict(frozen=True)

    d: int
    F1: float
    F1_uncertainty: float = 0.0
    F2_tilde: float
    F2_uncertainty: float = 0.0
    F_tilde: float
    uncertainty: float
    certified_value: float
    bounds: list[float]
    d_ent: int
    convention: str = CONVENTION
    momentum_relabeling: str = "point-reflection"
    grid: str = ""
    n_frames: int = 0
    elapsed_seconds: float = 0.0

    def bounds_frame(self) -> pd.DataFrame:
        """Table (r, B_r, dépassée) des bornes de Schmidt."""
        r = np.arange(1, self.d + 1)
        bounds = np.asarray(self.bounds)
        return pd.DataFrame({"r": r, "B_r": bounds, "exceeded": bounds < self.certified_value})

    def to_text(self, include_timing: bool = True) -> str:
        lines = [
            "== Témoin de dimensionnalité ==",
            f"grille           = {self.grid or f'd={self.d}'}",
            f"N                = {self.n_frames}",
            f"F1               = {self.F1:.6g} ± {self.F1_uncertainty:.2g}",
            f"F2~              = {self.F2_tilde:.6g} ± {self.F2_uncertainty:.2g}",
            f"F~               = {self.F_tilde:.6g} ± {self.uncertainty:.2g}",
            f"F~ − σ           = {self.certified_value:.6g}",
            f"d_ent            = {self.d_ent} (sur d = {self.d})",
            f"convention       = {self.convention}",
            f"relabel impulsion= {self.momentum_relabeling}",
        ]
        if include_timing:
            lines.append(f"durée            = {self.elapsed_seconds:.3f} s")
        return "\n".join(lines) + "\n"


def certify(
    F1: float,
    F2_tilde: float,
    uncertainty: float,
    d: int,
    **metadata: object,
) -> WitnessReport:
    """Dimension certifiée: 1 + max r tel que r/d < F̃ − σ (r ≤ d − 1)."""
    if d < 2:
        raise ValueError("d doit être >= 2")
    f_tilde = F1 + F2_tilde
    certified = f_tilde - uncertainty
    bounds = np.arange(1, d + 1) / d
    exceeded = np.nonzero(bounds[: d - 1] < certified)[0]
    d_ent = int(exceeded[-1]) + 2 if exceeded.size else 1
    report = WitnessReport(
        d=d,
        F1=F1,
        F2_tilde=F2_tilde,
        F_tilde=f_tilde,
        uncertainty=uncertainty,
        certified_value=certified,
        bounds=bounds.tolist(),
        d_ent=d_ent,
        **metadata,
    )
    if d_ent > 1:
        logger.info(f"🔐 Intrication certifiée en dimension {d_ent} (F̃ = {f_tilde:.4g} ± {uncertainty:.2g})")
    else:
        logger.warning(f"⚠️  Aucune intrication certifiée (F̃ = {f_tilde:.4g} ± {uncertainty:.2g})")
    return report


def witness_pipeline(
    nf_stats: AccumStats | Sequence[AccumStats],
    ff_stats: AccumStats | Sequence[AccumStats],
    grid: ModeGrid,
) -> WitnessReport:
    """Chaîne complète: matrices dans les deux bases, F₁, F̃₂, certification."""
    start = time.perf_counter()
    with WITNESS_DURATION.time():
        pos = coincidence_matrix(nf_stats, grid, POSITION)
        mom = coincidence_matrix(ff_stats, grid, MOMENTUM)
        f1 = compute_F1(pos)
        f2 = compute_F2_lower(pos, mom)

        pairs = _paired_replicates(pos, mom)
        if len(pairs) >= 2:
            uncertainty = jackknife_se([_f1_value(p) + _f2_value(p, q) for p, q in pairs])
        else:
            logger.warning("⚠️  Pas de blocs: incertitude sur F̃ fixée à 0")
            uncertainty = 0.0
        elapsed = time.perf_counter() - start
        report = certify(
            f1.value,
            f2.value,
            uncertainty,
            grid.d,
            F1_uncertainty=f1.uncertainty,
            F2_uncertainty=f2.uncertainty,
            momentum_relabeling=mom.relabeling,
            grid=grid.describe(),
            n_frames=min(pos.n_frames, mom.n_frames),
            elapsed_seconds=elapsed,
        )
    return report
