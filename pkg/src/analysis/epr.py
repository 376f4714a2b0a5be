"""Critère EPR Δr·Δk < 1/2, confiance C et loi d'échelle C ∝ √N."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from src.analysis.gaussian_fit import GaussianFitResult, fit_gaussian_peak
from src.extract.frame_io import SensorGeometry
from src.simulate.spdc import DetectorParams, Mode
from src.transform.jpd import AccumStats, FrameSource, accumulate_prefixes
from src.transform.projections import minus_projection, sum_projection
from src.utils.exceptions import FitConvergenceError, UnitMismatchError

EPR_BOUND = 0.5
CONFIDENCE_THRESHOLD = 5.0
LENGTH_UNITS = {"nm": 1e-3, "um": 1.0, "mm": 1e3, "m": 1e6}

# Valeurs publiées: produit 4.6(2)e-2 et C = 227 à N = 1e7. Le texte annonce
# aussi σ = 1e-3, incompatible avec C = 227 (0.454 / 1e-3 = 454).
PUBLISHED_REFERENCE = {
    "product": 4.6e-2,
    "sigma_product": 2e-3,
    "sigma_product_as_stated": 1e-3,
    "confidence": 227.0,
    "n_frames": 10_000_000,
}

logger = logging.getLogger(__name__)


class EprReport(BaseModel):
    """Produit des largeurs, incertitude propagée et confiance."""

    model_config = ConfigDict(frozen=True)

    delta_r: float
    delta_r_uncertainty: float
    delta_k: float
    delta_k_uncertainty: float
    units_r: str
    units_k: str
    product: float
    sigma_product: float
    confidence: float
    n_frames: int
    violates: bool
    confident: bool
    pixel_limited_nf: bool = False
    pixel_limited_ff: bool = False
    reliable: bool = True

    @property
    def verdict(self) -> str:
        if self.violates and self.confident:
            return "EPR-violating"
        if self.violates:
            return "inconclusive"
        return "non-violating"

    def to_frame(self) -> pd.DataFrame:
        row = self.model_dump()
        row["verdict"] = self.verdict
        return pd.DataFrame([row])

    def summary_text(self) -> str:
        """Bloc texte récapitulatif."""
        limited = []
        if self.pixel_limited_nf:
            limited.append("Δr limité par les pixels (borne supérieure)")
        if self.pixel_limited_ff:
            limited.append("Δk limité par les pixels (borne supérieure)")
        lines = [
            "== Critère EPR ==",
            f"N                = {self.n_frames}",
            f"Δr               = {self.delta_r:.6g} ± {self.delta_r_uncertainty:.2g} {self.units_r}",
            f"Δk               = {self.delta_k:.6g} ± {self.delta_k_uncertainty:.2g} {self.units_k}",
            f"Δr·Δk            = {self.product:.6g} ± {self.sigma_product:.2g}",
            f"C                = {self.confidence:.6g}",
            f"verdict          = {self.verdict}",
            f"référence publiée: Δr·Δk = {PUBLISHED_REFERENCE['product']} "
            f"± {PUBLISHED_REFERENCE['sigma_product']} (C = {PUBLISHED_REFERENCE['confidence']:.0f}); "
            f"σ = {PUBLISHED_REFERENCE['sigma_product_as_stated']} dans le texte donnerait C = 454",
        ]
        lines.extend(f"note: {item}" for item in limited)
        return "\n".join(lines) + "\n"


def _check_units(units_r: str, units_k: str) -> None:
    if units_r not in LENGTH_UNITS:
        raise UnitMismatchError(f"Unité de position non physique: {units_r!r}")
    if units_k != f"rad/{units_r}":
        raise UnitMismatchError(
            f"Unités incohérentes: Δr en {units_r!r}, Δk en {units_k!r} (attendu 'rad/{units_r}')"
        )


def epr_evaluate(
    fit_nf: GaussianFitResult, fit_ff: GaussianFitResult, n_frames: int
) -> EprReport:
    """Évalue le critère EPR à partir des ajustements NF (minus) et FF (sum)."""
    _check_units(fit_nf.units, fit_ff.units)
    product = fit_nf.delta * fit_ff.delta
    sigma = product * math.sqrt(
        (fit_nf.delta_uncertainty / fit_nf.delta) ** 2
        + (fit_ff.delta_uncertainty / fit_ff.delta) ** 2
    )
    gap = abs(EPR_BOUND - product)
    if sigma > 0:
        confidence = gap / sigma
    else:
        confidence = math.inf if gap > 0 else 0.0
    violates = product < EPR_BOUND
    confident = violates and product + CONFIDENCE_THRESHOLD * sigma < EPR_BOUND

    report = EprReport(
        delta_r=fit_nf.delta,
        delta_r_uncertainty=fit_nf.delta_uncertainty,
        delta_k=fit_ff.delta,
        delta_k_uncertainty=fit_ff.delta_uncertainty,
        units_r=fit_nf.units,
        units_k=fit_ff.units,
        product=product,
        sigma_product=sigma,
        confidence=confidence,
        n_frames=n_frames,
        violates=violates,
        confident=confident,
        pixel_limited_nf=fit_nf.pixel_limited,
        pixel_limited_ff=fit_ff.pixel_limited,
        reliable=fit_nf.reliable and fit_ff.reliable,
    )
    if report.verdict == "EPR-violating":
        logger.info(f"✅ Violation EPR: Δr·Δk = {product:.4g} ± {sigma:.2g}, C = {confidence:.1f}")
    else:
        logger.warning(
            f"⚠️  Pas de violation confiante ({report.verdict}): Δr·Δk = {product:.4g}, C = {confidence:.2f}"
        )
    return report


def calibrations(
    det: DetectorParams, geometry: SensorGeometry, length_unit: str = "um"
) -> tuple[float, float, str, str]:
    """Calibrations NF et FF par pixel dans l'unité de longueur demandée.

    Returns:
        (calibration NF, calibration FF, unité NF, unité FF)

    """
    if length_unit not in LENGTH_UNITS:
        raise UnitMismatchError(f"Unité inconnue: {length_unit!r}")
    factor = LENGTH_UNITS[length_unit]
    nf = det.calibration(Mode.NF, geometry) / factor
    ff = det.calibration(Mode.FF, geometry) * factor
    return nf, ff, length_unit, f"rad/{length_unit}"


def analyze_epr(
    nf_stats: AccumStats,
    ff_stats: AccumStats,
    calibration_nf: float,
    calibration_ff: float,
    units_r: str = "um",
    units_k: str = "rad/um",
) -> tuple[EprReport, GaussianFitResult, GaussianFitResult]:
    """Chaîne complète: projections, ajustements et critère."""
    fit_nf = fit_gaussian_peak(
        minus_projection(nf_stats), exclude_center=True, calibration=calibration_nf, units=units_r
    )
    fit_ff = fit_gaussian_peak(
        sum_projection(ff_stats), exclude_center=False, calibration=calibration_ff, units=units_k
    )
    n_frames = min(nf_stats.n_frames, ff_stats.n_frames)
    return epr_evaluate(fit_nf, fit_ff, n_frames), fit_nf, fit_ff


class ScalingPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_frames: int
    confidence: float
    product: float
    sigma_product: float
    included: bool
    reason: str = ""


class ScalingTable(BaseModel):
    """Confiance par checkpoint et ajustement C = c·√N."""

    model_config = ConfigDict(frozen=True)

    points: list[ScalingPoint]
    coefficient: float
    r_squared: float

    @property
    def excluded(self) -> list[int]:
        return [p.n_frames for p in self.points if not p.included]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([p.model_dump() for p in self.points])
        if frame.empty:
            frame = pd.DataFrame(columns=list(ScalingPoint.model_fields))
        frame["model"] = self.coefficient * np.sqrt(frame["n_frames"].astype(float))
        return frame

    def summary_text(self) -> str:
        lines = ["== Loi d'échelle C = c·√N ==", f"c  = {self.coefficient:.6g}",
                 f"R² = {self.r_squared:.6g}"]
        for p in self.points:
            flag = "" if p.included else f"  [exclu: {p.reason}]"
            lines.append(f"N = {p.n_frames:>10d}  C = {p.confidence:.6g}{flag}")
        return "\n".join(lines) + "\n"


def fit_sqrt_law(n_frames: Sequence[int], confidence: Sequence[float]) -> tuple[float, float]:
    """Moindres carrés de C = c·√N (sans ordonnée à l'origine).

    Returns:
        (c, R²) avec R² calculé autour de la moyenne des C

    """
    root_n = np.sqrt(np.asarray(n_frames, dtype=np.float64))
    c_values = np.asarray(confidence, dtype=np.float64)
    if root_n.size == 0:
        return math.nan, math.nan
    c = float((c_values * root_n).sum() / (root_n**2).sum())
    ss_res = float(((c_values - c * root_n) ** 2).sum())
    ss_tot = float(((c_values - c_values.mean()) ** 2).sum())
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else math.nan
    return c, r_squared


def _prefix_fits(
    frames: FrameSource,
    checkpoints: Sequence[int],
    kind: str,
    calibration: float,
    units: str,
    chunk_size: int,
) -> dict[int, GaussianFitResult | str]:
    fits: dict[int, GaussianFitResult | str] = {}

    def on_checkpoint(stats: AccumStats) -> None:
        try:
            if kind == "minus":
                proj = minus_projection(stats)
            else:
                proj = sum_projection(stats)
            fits[stats.n_frames] = fit_gaussian_peak(
                proj, exclude_center=kind == "minus", calibration=calibration, units=units
            )
        except FitConvergenceError as exc:
            fits[stats.n_frames] = str(exc)

    accumulate_prefixes(frames, checkpoints, on_checkpoint, chunk_size=chunk_size)
    return fits


def confidence_scaling(
    nf_frames: FrameSource,
    ff_frames: FrameSource,
    checkpoints: Sequence[int],
    calibration_nf: float,
    calibration_ff: float,
    units_r: str = "um",
    units_k: str = "rad/um",
    chunk_size: int = 65536,
) -> ScalingTable:
    """Confiance C sur les préfixes de N trames de chaque flux, puis ajustement c·√N.

    Chaque checkpoint reprend la chaîne complète (projections, ajustements,
    critère) sur les N premières trames. Les checkpoints dont un ajustement
    échoue ou n'est pas fiable sont exclus de la régression et signalés.
    """
    checkpoints = [int(n) for n in checkpoints]
    if any(n <= 0 for n in checkpoints):
        raise ValueError(f"Les checkpoints doivent être > 0 (reçu {checkpoints})")
    if checkpoints != sorted(checkpoints) or len(set(checkpoints)) != len(checkpoints):
        raise ValueError("Les checkpoints doivent être strictement croissants")
    _check_units(units_r, units_k)

    nf_fits = _prefix_fits(nf_frames, checkpoints, "minus", calibration_nf, units_r, chunk_size)
    ff_fits = _prefix_fits(ff_frames, checkpoints, "sum", calibration_ff, units_k, chunk_size)

    points = []
    for n in checkpoints:
        fit_nf, fit_ff = nf_fits.get(n), ff_fits.get(n)
        if fit_nf is None or fit_ff is None:
            points.append(ScalingPoint(n_frames=n, confidence=math.nan, product=math.nan,
                                       sigma_product=math.nan, included=False,
                                       reason="checkpoint non atteint"))
            continue
        if isinstance(fit_nf, str) or isinstance(fit_ff, str):
            reason = fit_nf if isinstance(fit_nf, str) else fit_ff
            points.append(ScalingPoint(n_frames=n, confidence=math.nan, product=math.nan,
                                       sigma_product=math.nan, included=False, reason=reason))
            continue
        report = epr_evaluate(fit_nf, fit_ff, n)
        reason = ""
        if not report.reliable:
            reason = "ajustement non fiable"
        elif not math.isfinite(report.confidence):
            reason = "σ nul"
        points.append(
            ScalingPoint(
                n_frames=n,
                confidence=report.confidence,
                product=report.product,
                sigma_product=report.sigma_product,
                included=not reason,
                reason=reason,
            )
        )

    kept = [p for p in points if p.included]
    for p in points:
        if not p.included:
            logger.warning(f"⚠️  Checkpoint N={p.n_frames} exclu: {p.reason}")
    c, r_squared = fit_sqrt_law([p.n_frames for p in kept], [p.confidence for p in kept])
    logger.info(f"✅ Loi d'échelle: c = {c:.4g}, R² = {r_squared:.4f} sur {len(kept)} points")
    return ScalingTable(points=points, coefficient=c, r_squared=r_squared)
