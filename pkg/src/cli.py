"""Interface en ligne de commande ``spadcorr``.

Codes de sortie: 0 succès, 2 erreur de validation, 3 erreur d'entrée/sortie.
"""

from __future__ import annotations

import functools
import logging
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

import click

from src.load.exporters import ArtifactManifest
from src.pipeline import AnalysisPipeline, export_projections
from src.transform.jpd import accumulate
from src.utils.config import RunConfig, load_config
from src.utils.exceptions import FitConvergenceError, FrameFormatError
from src.utils.logging_config import configure_logging

EXIT_VALIDATION = 2
EXIT_IO = 3

logger = logging.getLogger(__name__)


def handle_errors(func: Callable[..., Any]) -> Callable[..., Any]:
    """Traduit les exceptions du toolkit en codes de sortie."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except (FrameFormatError, OSError) as exc:
            logger.error(f"❌ Erreur d'entrée/sortie: {exc}")
            click.echo(f"Erreur d'entrée/sortie: {exc}", err=True)
            sys.exit(EXIT_IO)
        except (ValueError, FitConvergenceError) as exc:
            logger.error(f"❌ Erreur de validation: {exc}")
            click.echo(f"Erreur de validation: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)

    return wrapper


def _frame_count(ctx: click.Context, param: click.Parameter, value: str | None) -> int | None:
    """Accepte ``1e6`` comme nombre de trames."""
    if value is None:
        return None
    try:
        number = float(value)
    except ValueError as exc:
        raise click.BadParameter(f"nombre de trames invalide: {value}") from exc
    if number < 0 or number != int(number):
        raise click.BadParameter(f"nombre de trames invalide: {value}")
    return int(number)


def _int_list(ctx: click.Context, param: click.Parameter, value: str | None) -> list[int] | None:
    if not value:
        return None
    try:
        return [int(float(item)) for item in value.split(",") if item.strip()]
    except ValueError as exc:
        raise click.BadParameter(f"liste d'entiers attendue: {value}") from exc


def _anchor(ctx: click.Context, param: click.Parameter, value: tuple[str, ...]) -> list[tuple[int, int]]:
    anchors = []
    for item in value:
        try:
            row, col = (int(v) for v in item.split(","))
        except ValueError as exc:
            raise click.BadParameter(f"ancre 'ligne,colonne' attendue: {item}") from exc
        anchors.append((row, col))
    return anchors


def config_options(func: Callable[..., Any]) -> Callable[..., Any]:
    """Options communes de configuration de run."""
    options = [
        click.option("--config", "config_file", type=click.Path(path_type=Path),
                     help="Fichier clé=valeur (SPADCORR_...)"),
        click.option("--preset", help="Preset de config/presets (paper-ff, paper-nf, separable, entangled-small, paper-both)"),
        click.option("--frames", callback=_frame_count, help="Nombre de trames (1e6 accepté)"),
        click.option("--seed", type=int, help="Graine du simulateur"),
        click.option("--mode", type=click.Choice(["NF", "FF", "both"]), help="Configuration optique"),
        click.option("--checkpoints", callback=_int_list, help="Checkpoints N séparés par des virgules"),
        click.option("--grid-side", type=int, help="Côté de la grille de modes"),
        click.option("--grid-spacing", type=int, help="Espacement de la grille en pixels"),
        click.option("--out", type=click.Path(path_type=Path), help="Répertoire de sortie"),
        click.option("--workers", type=int, help="Nombre de workers"),
        click.option("--no-progress", is_flag=True, help="Désactive les barres de progression"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def build_config(
    config_file: Path | None,
    preset: str | None,
    frames: int | None,
    seed: int | None,
    mode: str | None,
    checkpoints: list[int] | None,
    grid_side: int | None,
    grid_spacing: int | None,
    out: Path | None,
    workers: int | None,
) -> RunConfig:
    grid = {key: value for key, value in (("side", grid_side), ("spacing", grid_spacing))
            if value is not None}
    return load_config(
        config_file,
        preset,
        n_frames=frames,
        seed=seed,
        mode=mode,
        checkpoints=checkpoints,
        grid=grid or None,
        output_dir=out,
        workers=workers,
    )


@click.group()
@click.option("--log-level", default="INFO", show_default=True, help="Niveau de log")
@click.option("--log-json", is_flag=True, help="Logs au format JSON")
def cli(log_level: str, log_json: bool) -> None:
    """Simulation et analyse de corrélations de paires de photons sur caméra SPAD."""
    configure_logging(log_level, json_format=log_json)


@cli.command()
@config_options
@handle_errors
def simulate(no_progress: bool, **options: Any) -> None:
    """Simule les fichiers de trames SPF1 (NF et/ou FF)."""
    cfg = build_config(**options)
    pipeline = AnalysisPipeline(cfg, progress=not no_progress).simulate()
    pipeline.manifest.write()
    for mode, path in pipeline.frames.items():
        click.echo(f"{mode}: {path}")


@cli.command()
@click.argument("frames", nargs=-1, required=True, type=click.Path(path_type=Path))
@click.option("--anchor", "anchors", multiple=True, callback=_anchor,
              help="Ancre 'ligne,colonne' d'une projection conditionnelle (répétable)")
@click.option("--out", type=click.Path(path_type=Path), default=Path("runs/jpd"), show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--no-progress", is_flag=True)
@handle_errors
def jpd(frames: tuple[Path, ...], anchors: list[tuple[int, int]], out: Path, workers: int,
        no_progress: bool) -> None:
    """Projections somme, minus et conditionnelles de fichiers SPF1 (CSV + PGM)."""
    out.mkdir(parents=True, exist_ok=True)
    manifest = ArtifactManifest(out)
    for path in frames:
        stats = accumulate(path, workers=workers, progress=not no_progress)
        projections, written = export_projections(stats, out, path.stem, anchors)
        manifest.extend(written)
        for name, proj in projections.items():
            click.echo(f"{path.stem} {name}: SNR = {proj.snr:.1f}")
    manifest.write()


@cli.command()
@click.option("--nf", type=click.Path(path_type=Path), required=True, help="Trames champ proche")
@click.option("--ff", type=click.Path(path_type=Path), required=True, help="Trames champ lointain")
@config_options
@handle_errors
def epr(nf: Path, ff: Path, no_progress: bool, **options: Any) -> None:
    """Critère EPR (et étude C(N) si des checkpoints sont donnés)."""
    cfg = build_config(**options)
    pipeline = (
        AnalysisPipeline(cfg, progress=not no_progress)
        .load_frames(nf=nf, ff=ff)
        .accumulate(with_blocks=False)
        .analyze_epr()
        .scaling()
    )
    pipeline.summary()
    if pipeline.epr_report is None:
        click.echo("Critère EPR non évalué (ajustement gaussien en échec)", err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo(pipeline.epr_report.summary_text(), nl=False)
    if pipeline.scaling_table is not None:
        click.echo(pipeline.scaling_table.summary_text(), nl=False)


@cli.command()
@click.option("--nf", type=click.Path(path_type=Path), required=True, help="Trames champ proche")
@click.option("--ff", type=click.Path(path_type=Path), required=True, help="Trames champ lointain")
@config_options
@handle_errors
def certify(nf: Path, ff: Path, no_progress: bool, **options: Any) -> None:
    """Certification de la dimensionnalité d'intrication sur une grille de modes."""
    cfg = build_config(**options)
    pipeline = (
        AnalysisPipeline(cfg, progress=not no_progress)
        .load_frames(nf=nf, ff=ff)
        .accumulate(with_blocks=True)
        .certify()
    )
    pipeline.summary()
    click.echo(pipeline.witness_report.to_text(), nl=False)


@cli.command()
@config_options
@handle_errors
def pipeline(no_progress: bool, **options: Any) -> None:
    """Chaîne complète: simulation, projections, EPR, loi d'échelle, témoin."""
    cfg = build_config(**options)
    summary = (
        AnalysisPipeline(cfg, progress=not no_progress)
        .simulate()
        .accumulate()
        .analyze_jpd()
        .analyze_epr()
        .scaling()
        .certify()
        .summary()
    )
    for key in ("product", "confidence", "verdict", "F_tilde", "d_ent", "total_seconds"):
        click.echo(f"{key}: {summary[key]}")


def main() -> None:
    """Point d'entrée du script ``spadcorr``."""
    cli(prog_name="spadcorr")


if __name__ == "__main__":
    main()
