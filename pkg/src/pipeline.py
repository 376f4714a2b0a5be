"""Orchestration du run complet: simulation → accumulation → analyses → certification."""

from __future__ import annotations

import logging
import time
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pandas as pd

from src.analysis.epr import EprReport, ScalingTable, analyze_epr, calibrations, confidence_scaling
from src.analysis.gaussian_fit import GaussianFitResult, fit_residuals
from src.extract.frame_io import FrameReader, meta_path
from src.load.exporters import ArtifactManifest, write_csv, write_pgm, write_projection_csv
from src.simulate.spdc import Mode, SPDCSimulator
from src.transform.jpd import AccumStats, accumulate, accumulate_blocks, intensity_image
from src.transform.projections import (
    Projection,
    conditional_projection,
    minus_projection,
    sum_projection,
)
from src.utils.config import RunConfig, dump_config
from src.utils.exceptions import FitConvergenceError
from src.witness.fidelity import (
    MOMENTUM,
    POSITION,
    WitnessReport,
    coincidence_matrix,
    witness_pipeline,
)
from src.witness.grid import ModeGrid, select_grid

logger = logging.getLogger(__name__)


def mode_seed(seed: int, mode: Mode | str) -> int:
    """Graine dérivée par configuration (flux NF et FF indépendants)."""
    key = 0 if Mode(mode) is Mode.NF else 1
    return int(np.random.SeedSequence(seed, spawn_key=(key,)).generate_state(1)[0])


def export_projections(
    stats: AccumStats,
    out_dir: Path,
    prefix: str,
    anchors: list[tuple[int, int]] | None = None,
) -> tuple[dict[str, Projection], list[Path]]:
    """Calcule et exporte (CSV + PGM) intensité, projections somme/minus et conditionnelles.

    Sans ancre explicite, la projection conditionnelle est prise au pixel le plus lumineux.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    projections = {"sum": sum_projection(stats), "minus": minus_projection(stats)}

    intensity = intensity_image(stats)
    if not anchors:
        brightest = np.unravel_index(int(np.argmax(intensity)), intensity.shape)
        anchors = [(int(brightest[0]), int(brightest[1]))]
    for row, col in anchors:
        projections[f"conditional_{row}_{col}"] = conditional_projection(stats, (row, col))

    rows, cols = np.indices(intensity.shape)
    intensity_frame = pd.DataFrame(
        {"row": rows.ravel(), "col": cols.ravel(), "value": intensity.ravel()}
    )
    written.append(write_csv(intensity_frame, out_dir / f"{prefix}_intensity.csv"))
    written.append(write_pgm(intensity, out_dir / f"{prefix}_intensity.pgm"))
    for name, proj in projections.items():
        written.append(write_projection_csv(proj, out_dir / f"{prefix}_{name}.csv"))
        written.append(write_pgm(proj.values, out_dir / f"{prefix}_{name}.pgm"))
        if proj.snr is not None:
            logger.info(f"📊 {prefix} {name}: SNR = {proj.snr:.1f}")
    return projections, written


class AnalysisPipeline:
    """Pipeline chaînable reproduisant la chaîne d'analyse complète.

    Exemple:
        AnalysisPipeline(cfg).simulate().accumulate().analyze_jpd()
            .analyze_epr().scaling().certify().summary()
    """

    def __init__(self, config: RunConfig, progress: bool = True):
        self.config = config
        self.progress = progress
        self.output_dir = Path(config.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.manifest = ArtifactManifest(self.output_dir)
        self.frames: dict[str, Path] = {}
        self.stats: dict[str, AccumStats] = {}
        self.blocks: dict[str, list[AccumStats]] = {}
        self.projections: dict[str, dict[str, Projection]] = {}
        self.fits: dict[str, GaussianFitResult] = {}
        self.epr_report: EprReport | None = None
        self.scaling_table: ScalingTable | None = None
        self.witness_report: WitnessReport | None = None
        self.timings: dict[str, float] = {}
        self._grid: ModeGrid | None = None

        config_file = self.output_dir / "config.env"
        config_file.write_text(dump_config(config), encoding="utf-8")
        self.manifest.add(config_file)

    @contextmanager
    def _stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        logger.info(f"▶️  Étape {name}")
        try:
            yield
        except Exception:
            logger.error(f"❌ Échec de l'étape {name}")
            raise
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start

    @property
    def grid(self) -> ModeGrid:
        if self._grid is None:
            settings = self.config.grid
            self._grid = select_grid(
                self.config.geometry, settings.side, settings.spacing, settings.origin
            )
        return self._grid

    def _record(self, paths: list[Path]) -> None:
        self.manifest.extend(paths)

    def simulate(self) -> AnalysisPipeline:
        """Simule un fichier SPF1 par configuration demandée."""
        with self._stage("simulate"):
            for mode in self.config.modes:
                path = self.output_dir / f"frames_{mode.lower()}.spf"
                simulator = SPDCSimulator(
                    self.config.source,
                    self.config.detector,
                    self.config.geometry,
                    mode,
                    rng_seed=mode_seed(self.config.seed, mode),
                    workers=self.config.workers,
                    progress=self.progress,
                )
                simulator.run_to_file(path, self.config.n_frames)
                ledger = simulator.ledger
                logger.info(
                    f"🎲 {mode}: {ledger.generated_pairs} paires générées, "
                    f"{ledger.detected_pairs} détectées"
                )
                self.frames[mode] = path
                self._record([path, meta_path(path)])
        return self

    def load_frames(
        self, nf: str | Path | None = None, ff: str | Path | None = None
    ) -> AnalysisPipeline:
        """Utilise des fichiers SPF1 existants au lieu de simuler."""
        for mode, path in (("NF", nf), ("FF", ff)):
            if path is None:
                continue
            reader = FrameReader(path)
            if not reader.geometry.same_layout(self.config.geometry):
                logger.warning(
                    f"⚠️  Géométrie du fichier {reader.geometry.shape} différente de la "
                    f"configuration {self.config.geometry.shape}: le fichier prévaut"
                )
                self.config = self.config.model_copy(update={"geometry": reader.geometry})
                self._grid = None
            self.frames[mode] = Path(path)
        return self

    def accumulate(self, with_blocks: bool | None = None) -> AnalysisPipeline:
        """Statistiques totales, et statistiques par blocs sur les pixels du témoin."""
        if with_blocks is None:
            with_blocks = {"NF", "FF"} <= set(self.frames)
        with self._stage("accumulate"):
            for mode, path in self.frames.items():
                self.stats[mode] = accumulate(
                    path,
                    workers=self.config.workers,
                    chunk_size=self.config.chunk_size,
                    progress=self.progress,
                )
                if with_blocks:
                    self.blocks[mode] = accumulate_blocks(
                        path,
                        n_blocks=self.config.n_blocks,
                        pixels=self.grid.required_pixels(),
                        chunk_size=self.config.chunk_size,
                    )
        return self

    def analyze_jpd(self) -> AnalysisPipeline:
        """Projections et cartes exportées pour chaque configuration."""
        with self._stage("jpd"):
            for mode, stats in self.stats.items():
                if stats.n_frames < 2:
                    logger.warning(f"⚠️  {mode}: moins de deux trames, projections ignorées")
                    continue
                projections, written = export_projections(
                    stats, self.output_dir, mode.lower(), self.config.anchors
                )
                self.projections[mode] = projections
                self._record(written)
        return self

    def analyze_epr(self) -> AnalysisPipeline:
        """Critère EPR à partir des deux configurations."""
        if not {"NF", "FF"} <= set(self.stats):
            logger.warning("⚠️  Critère EPR ignoré: il faut les configurations NF et FF")
            return self
        with self._stage("epr"):
            cal_nf, cal_ff, units_r, units_k = calibrations(
                self.config.detector, self.config.geometry, self.config.length_unit
            )
            try:
                report, fit_nf, fit_ff = analyze_epr(
                    self.stats["NF"], self.stats["FF"], cal_nf, cal_ff, units_r, units_k
                )
            except FitConvergenceError as exc:
                logger.error(f"❌ Critère EPR non évalué: {exc}")
                return self
            self.epr_report = report
            self.fits = {"NF": fit_nf, "FF": fit_ff}
            written = [write_csv(report.to_frame(), self.output_dir / "epr.csv")]
            text = self.output_dir / "epr.txt"
            text.write_text(report.summary_text(), encoding="utf-8")
            written.append(text)
            for mode, proj_kind, fit in (("NF", "minus", fit_nf), ("FF", "sum", fit_ff)):
                proj = self.projections.get(mode, {}).get(proj_kind)
                if proj is None:
                    project = minus_projection if proj_kind == "minus" else sum_projection
                    proj = project(self.stats[mode])
                residual_path = self.output_dir / f"{mode.lower()}_{proj_kind}_residuals.pgm"
                written.append(write_pgm(fit_residuals(proj, fit), residual_path))
            self._record(written)
        return self

    def scaling(self) -> AnalysisPipeline:
        """Étude C(N) si des checkpoints sont configurés."""
        if not self.config.checkpoints or not {"NF", "FF"} <= set(self.frames):
            return self
        with self._stage("scaling"):
            cal_nf, cal_ff, units_r, units_k = calibrations(
                self.config.detector, self.config.geometry, self.config.length_unit
            )
            table = confidence_scaling(
                self.frames["NF"],
                self.frames["FF"],
                self.config.checkpoints,
                cal_nf,
                cal_ff,
                units_r,
                units_k,
                chunk_size=self.config.chunk_size,
            )
            self.scaling_table = table
            text = self.output_dir / "scaling.txt"
            text.write_text(table.summary_text(), encoding="utf-8")
            self._record([write_csv(table.to_frame(), self.output_dir / "scaling.csv"), text])
        return self

    def certify(self) -> AnalysisPipeline:
        """Témoin de dimensionnalité sur la grille configurée."""
        if not {"NF", "FF"} <= set(self.stats):
            logger.warning("⚠️  Certification ignorée: il faut les configurations NF et FF")
            return self
        with self._stage("certify"):
            nf = self.blocks.get("NF") or self.stats["NF"]
            ff = self.blocks.get("FF") or self.stats["FF"]
            report = witness_pipeline(nf, ff, self.grid)
            self.witness_report = report
            written = [write_csv(report.bounds_frame(), self.output_dir / "witness_bounds.csv")]
            text = self.output_dir / "witness.txt"
            text.write_text(report.to_text(include_timing=False), encoding="utf-8")
            written.append(text)
            for basis, stats in ((POSITION, nf), (MOMENTUM, ff)):
                matrix = coincidence_matrix(stats, self.grid, basis)
                written.append(matrix.to_csv(self.output_dir / f"coincidences_{basis}.csv"))
                heatmap = self.output_dir / f"coincidences_{basis}.pgm"
                written.append(write_pgm(matrix.normalized, heatmap))
            self._record(written)
        return self

    def summary(self) -> dict:
        """Résumé du run et écriture du manifeste.

        Returns:
            Dictionnaire (produit, C, F̃, d_ent, durées, manifeste)

        """
        manifest_path = self.manifest.write()
        summary: dict = {
            "product": None,
            "confidence": None,
            "verdict": None,
            "F_tilde": None,
            "d_ent": None,
            "scaling_coefficient": None,
            "scaling_r_squared": None,
            "timings": dict(self.timings),
            "total_seconds": sum(self.timings.values()),
            "manifest": self.manifest.to_frame().to_dict(orient="records"),
            "manifest_path": str(manifest_path),
        }
        if self.epr_report is not None:
            summary["product"] = self.epr_report.product
            summary["confidence"] = self.epr_report.confidence
            summary["verdict"] = self.epr_report.verdict
        if self.witness_report is not None:
            summary["F_tilde"] = self.witness_report.F_tilde
            summary["d_ent"] = self.witness_report.d_ent
        if self.scaling_table is not None:
            summary["scaling_coefficient"] = self.scaling_table.coefficient
            summary["scaling_r_squared"] = self.scaling_table.r_squared

        lines = [
            f"{key} = {value}"
            for key, value in summary.items()
            if key not in ("manifest", "timings")
        ]
        lines += [f"durée {name} = {seconds:.3f} s" for name, seconds in self.timings.items()]
        (self.output_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.info(f"✅ Run terminé en {summary['total_seconds']:.1f} s")
        return summary


def run_pipeline(config: RunConfig, progress: bool = True) -> dict:
    """Fonction utilitaire: pipeline complet à partir d'une configuration."""
    return (
        AnalysisPipeline(config, progress=progress)
        .simulate()
        .accumulate()
        .analyze_jpd()
        .analyze_epr()
        .scaling()
        .certify()
        .summary()
    )
