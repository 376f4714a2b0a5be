"""Conteneur binaire SPF1 et lecture/écriture en flux des trames SPAD.

Format (little-endian):
    b"SPF1" | u16 hauteur | u16 largeur | u64 nombre de trames | trames

Chaque trame est un bloc de bits en ordre ligne-majeur, bit de poids faible
en premier dans chaque octet, complété jusqu'à un octet entier. Les
métadonnées (pas, exposition, provenance) vont dans un fichier ``.meta`` à
côté, en lignes ``clé=valeur``.
"""

from __future__ import annotations

import logging
import struct
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path
from types import TracebackType

import numpy as np
from prometheus_client import Counter
from pydantic import BaseModel, ConfigDict, Field

from src.utils.exceptions import FrameFormatError, GeometryMismatchError

MAGIC = b"SPF1"
HEADER = struct.Struct("<4sHHQ")
HEADER_SIZE = HEADER.size
U16_MAX = 0xFFFF

FRAMES_WRITTEN = Counter("spadcorr_frames_written_total", "Nombre de trames écrites en SPF1")
FRAMES_READ = Counter("spadcorr_frames_read_total", "Nombre de trames décodées depuis SPF1")

logger = logging.getLogger(__name__)


class SensorGeometry(BaseModel):
    """Géométrie du capteur SPAD (valeurs par défaut: caméra 32×64 de 150 µm)."""

    model_config = ConfigDict(frozen=True)

    width: int = Field(default=64, ge=2)
    height: int = Field(default=32, ge=2)
    pixel_pitch: float = Field(default=150.0, gt=0)  # µm
    exposure: float = Field(default=10.0, gt=0)  # ns

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    @property
    def bytes_per_frame(self) -> int:
        return -(-self.n_pixels // 8)

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def same_layout(self, other: SensorGeometry) -> bool:
        return self.shape == other.shape


def pack_frames(frames: np.ndarray) -> np.ndarray:
    """Compacte des trames binaires (N, H, W) en octets (N, ceil(H*W/8))."""
    frames = np.ascontiguousarray(frames, dtype=bool)
    flat = frames.reshape(len(frames), int(np.prod(frames.shape[1:])))
    return np.packbits(flat, axis=1, bitorder="little")


def unpack_frames(payload: np.ndarray, geometry: SensorGeometry) -> np.ndarray:
    """Décompacte des octets (N, octets_par_trame) en trames booléennes (N, H, W)."""
    bits = np.unpackbits(payload, axis=1, count=geometry.n_pixels, bitorder="little")
    return bits.reshape(len(payload), *geometry.shape).astype(bool)


@dataclass(frozen=True)
class FrameSet:
    """Flux de trames binaires compactées et géométrie associée."""

    geometry: SensorGeometry
    n_frames: int
    payload: np.ndarray
    source_tag: str = ""

    def __post_init__(self) -> None:
        expected = (self.n_frames, self.geometry.bytes_per_frame)
        if self.payload.dtype != np.uint8 or self.payload.shape != expected:
            raise FrameFormatError(
                f"Charge utile incohérente: attendu {expected} uint8, "
                f"reçu {self.payload.shape} {self.payload.dtype}"
            )
        self.payload.flags.writeable = False

    @classmethod
    def from_frames(
        cls, frames: np.ndarray, geometry: SensorGeometry, source_tag: str = ""
    ) -> FrameSet:
        frames = np.asarray(frames)
        if frames.ndim != 3 or frames.shape[1:] != geometry.shape:
            raise GeometryMismatchError(
                f"Trames de forme {frames.shape[1:]} pour une géométrie {geometry.shape}"
            )
        return cls(geometry, len(frames), pack_frames(frames), source_tag)

    @classmethod
    def empty(cls, geometry: SensorGeometry, source_tag: str = "") -> FrameSet:
        payload = np.zeros((0, geometry.bytes_per_frame), dtype=np.uint8)
        return cls(geometry, 0, payload, source_tag)

    def __len__(self) -> int:
        return self.n_frames

    @property
    def nbytes(self) -> int:
        return int(self.payload.size)

    def frames(self) -> np.ndarray:
        return unpack_frames(self.payload, self.geometry)

    def chunks(self, chunk_size: int) -> Iterator[np.ndarray]:
        for payload in self.packed_chunks(chunk_size):
            yield unpack_frames(payload, self.geometry)

    def packed_chunks(self, chunk_size: int) -> Iterator[np.ndarray]:
        """Blocs d'octets compactés (vues, sans copie)."""
        if chunk_size < 1:
            raise ValueError("chunk_size doit être >= 1")
        for start in range(0, self.n_frames, chunk_size):
            yield self.payload[start : start + chunk_size]

    def head(self, n: int) -> FrameSet:
        """Retourne les ``n`` premières trames."""
        n = min(n, self.n_frames)
        return FrameSet(self.geometry, n, self.payload[:n].copy(), self.source_tag)


def intensity_image(frames: FrameSet, chunk_size: int = 65536) -> np.ndarray:
    """Image d'intensité moyenne (probabilité de détection par pixel et par trame)."""
    total = np.zeros(frames.geometry.shape, dtype=np.int64)
    for chunk in frames.chunks(chunk_size):
        total += chunk.sum(axis=0, dtype=np.int64)
    return total / max(frames.n_frames, 1)


def meta_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def _write_meta(path: Path, geometry: SensorGeometry, source_tag: str) -> None:
    tag = source_tag.replace("\n", " ")
    meta_path(path).write_text(
        f"pixel_pitch={geometry.pixel_pitch!r}\n"
        f"exposure={geometry.exposure!r}\n"
        f"source_tag={tag}\n",
        encoding="utf-8",
    )


def read_meta(path: str | Path) -> dict[str, str]:
    """Lit le fichier ``.meta`` associé (vide s'il est absent)."""
    sidecar = meta_path(path)
    if not sidecar.exists():
        return {}
    meta = {}
    for line in sidecar.read_text(encoding="utf-8").splitlines():
        key, sep, value = line.partition("=")
        if sep:
            meta[key.strip()] = value
    return meta


class FrameWriter:
    """Écriture incrémentale d'un fichier SPF1.

    Le nombre de trames de l'en-tête est corrigé à la fermeture, ce qui
    permet au simulateur d'écrire des runs longs sans tout garder en mémoire.
    """

    def __init__(self, path: str | Path, geometry: SensorGeometry, source_tag: str = ""):
        if geometry.width > U16_MAX or geometry.height > U16_MAX:
            raise FrameFormatError(
                f"Géométrie {geometry.height}×{geometry.width} hors de la plage u16"
            )
        self.path = Path(path)
        self.geometry = geometry
        self.source_tag = source_tag
        self.n_frames = 0
        self._fh = self.path.open("wb")
        self._fh.write(HEADER.pack(MAGIC, geometry.height, geometry.width, 0))

    def append(self, frames: np.ndarray) -> None:
        """Ajoute un bloc de trames binaires (N, H, W)."""
        if frames.shape[1:] != self.geometry.shape:
            raise GeometryMismatchError(
                f"Bloc de forme {frames.shape[1:]} pour une géométrie {self.geometry.shape}"
            )
        self.append_packed(pack_frames(frames))

    def append_packed(self, payload: np.ndarray) -> None:
        self._fh.write(np.ascontiguousarray(payload, dtype=np.uint8).tobytes())
        self.n_frames += len(payload)

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(
            HEADER.pack(MAGIC, self.geometry.height, self.geometry.width, self.n_frames)
        )
        self._fh.close()
        _write_meta(self.path, self.geometry, self.source_tag)
        FRAMES_WRITTEN.inc(self.n_frames)
        logger.info(f"💾 {self.n_frames} trames écrites dans {self.path}")

    def __enter__(self) -> FrameWriter:
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        self.close()


def write_frames(path: str | Path, frames: FrameSet) -> None:
    """Écrit un FrameSet au format SPF1 avec son fichier ``.meta``."""
    with FrameWriter(path, frames.geometry, frames.source_tag) as writer:
        writer.append_packed(frames.payload)


class FrameReader:
    """Lecteur de fichiers SPF1."""

    def __init__(self, path: str | Path):
        """Initialise le lecteur et valide l'en-tête.

        Args:
            path: Chemin vers le fichier SPF1

        """
        self.path = Path(path)
        if not self.path.exists():
            raise FileNotFoundError(f"Fichier non trouvé: {path}")

        with self.path.open("rb") as fh:
            raw = fh.read(HEADER_SIZE)
        if len(raw) < HEADER_SIZE or raw[:4] != MAGIC:
            raise FrameFormatError(f"Signature SPF1 absente dans {self.path}")
        _, height, width, n_frames = HEADER.unpack(raw)

        self.metadata = read_meta(self.path)
        self.geometry = SensorGeometry(
            width=width,
            height=height,
            pixel_pitch=float(self.metadata.get("pixel_pitch", 150.0)),
            exposure=float(self.metadata.get("exposure", 10.0)),
        )
        self.n_frames = int(n_frames)
        self.source_tag = self.metadata.get("source_tag", "")

        expected = self.n_frames * self.geometry.bytes_per_frame
        actual = self.path.stat().st_size - HEADER_SIZE
        if actual != expected:
            raise FrameFormatError(
                f"Charge utile tronquée ou invalide dans {self.path}: "
                f"{expected} octets attendus, {actual} présents"
            )

    def frames(self, chunk_size: int) -> Iterator[np.ndarray]:
        """Produit les trames par blocs d'au plus ``chunk_size``, dans l'ordre du fichier."""
        for payload in self.packed_chunks(chunk_size):
            yield unpack_frames(payload, self.geometry)

    def packed_chunks(self, chunk_size: int) -> Iterator[np.ndarray]:
        """Blocs d'octets bruts (N, octets_par_trame), sans décodage."""
        if chunk_size < 1:
            raise ValueError("chunk_size doit être >= 1")
        bpf = self.geometry.bytes_per_frame
        remaining = self.n_frames
        with self.path.open("rb") as fh:
            fh.seek(HEADER_SIZE)
            while remaining > 0:
                n = min(chunk_size, remaining)
                raw = fh.read(n * bpf)
                if len(raw) != n * bpf:
                    raise FrameFormatError(
                        f"Lecture tronquée: {n * bpf} octets attendus, {len(raw)} lus"
                    )
                payload = np.frombuffer(raw, dtype=np.uint8).reshape(n, bpf)
                remaining -= n
                FRAMES_READ.inc(n)
                yield payload

    def read(self) -> FrameSet:
        """Décode le fichier entier."""
        logger.info(f"📥 Lecture de {self.n_frames} trames depuis {self.path}")
        with self.path.open("rb") as fh:
            fh.seek(HEADER_SIZE)
            raw = fh.read()
        payload = np.frombuffer(raw, dtype=np.uint8).reshape(
            self.n_frames, self.geometry.bytes_per_frame
        )
        FRAMES_READ.inc(self.n_frames)
        return FrameSet(self.geometry, self.n_frames, payload.copy(), self.source_tag)


def stream_frames(path: str | Path, chunk_size: int) -> Iterator[np.ndarray]:
    """Fonction utilitaire: flux de blocs de trames décodées."""
    yield from FrameReader(path).frames(chunk_size)


def read_frames(path: str | Path) -> FrameSet:
    """Fonction utilitaire: lecture complète d'un fichier SPF1."""
    return FrameReader(path).read()


def iter_chunks(
    source: FrameSet | str | Path | Iterable[np.ndarray], chunk_size: int = 65536
) -> Iterator[np.ndarray]:
    """Normalise une source de trames (FrameSet, chemin ou itérable de blocs)."""
    if isinstance(source, FrameSet):
        yield from source.chunks(chunk_size)
    elif isinstance(source, (str, Path)):
        yield from stream_frames(source, chunk_size)
    else:
        for chunk in source:
            yield np.asarray(chunk, dtype=bool)
