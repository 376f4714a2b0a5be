"""Configuration pytest et fixtures communes pour tous les tests."""

import numpy as np
import pytest

from src.extract.frame_io import FrameSet, SensorGeometry
from src.simulate.spdc import DetectorParams, SourceParams
from src.utils.config import GridSettings, RunConfig

# Capteur réduit: paires séparées d'environ 0.7 pixel dans les deux bases,
# pompe de 2 pixels d'écart-type en champ proche.
SMALL_SENSOR = {"height": 12, "width": 12, "pixel_pitch": 150.0, "exposure": 10.0}
SMALL_SOURCE = {
    "sigma_pump": 70.0,
    "delta_r_true": 12.25,
    "delta_k_true": 1.358e-2,
    "mean_pairs_per_frame": 0.5,
}


@pytest.fixture
def tiny_geometry():
    """Capteur 2×2 (le plus petit autorisé)."""
    return SensorGeometry(width=2, height=2)


@pytest.fixture
def small_geometry():
    """Capteur 8×8."""
    return SensorGeometry(width=8, height=8)


@pytest.fixture
def sensor_geometry():
    """Capteur 12×12 utilisé pour les simulations courtes."""
    return SensorGeometry(**SMALL_SENSOR)


@pytest.fixture
def ideal_detector():
    """Détecteur parfait: efficacité 1, pas de coups d'obscurité."""
    return DetectorParams(quantum_efficiency=1.0, fill_factor=1.0, dark_count_prob=0.0)


@pytest.fixture
def small_source():
    """Source intriquée adaptée au capteur 12×12."""
    return SourceParams(**SMALL_SOURCE)


@pytest.fixture
def separable_source():
    """Source séparable de mêmes marginales."""
    return SourceParams(**SMALL_SOURCE, separable=True)


@pytest.fixture
def random_frames():
    """Fabrique de FrameSet aléatoires reproductibles."""

    def make(n_frames=100, height=8, width=8, p=0.2, seed=0):
        rng = np.random.default_rng(seed)
        frames = rng.random((n_frames, height, width)) < p
        return FrameSet.from_frames(frames, SensorGeometry(width=width, height=height), "test")

    return make


@pytest.fixture
def two_pixel_frames(tiny_geometry):
    """Frames {11,10,01,11} sur les pixels 0 et 1 d'un capteur 2×2."""
    frames = np.zeros((4, 2, 2), dtype=bool)
    frames[0, 0, :] = [1, 1]
    frames[1, 0, :] = [1, 0]
    frames[2, 0, :] = [0, 1]
    frames[3, 0, :] = [1, 1]
    return FrameSet.from_frames(frames, tiny_geometry)


@pytest.fixture
def small_config(tmp_path, small_source, ideal_detector, sensor_geometry):
    """Fabrique de RunConfig courtes dans un répertoire temporaire."""

    def make(**overrides):
        values = {
            "mode": "both",
            "source": small_source,
            "detector": ideal_detector,
            "geometry": sensor_geometry,
            "grid": GridSettings(side=4, spacing=1),
            "n_frames": 20_000,
            "seed": 3,
            "output_dir": tmp_path / "run",
            "chunk_size": 8192,
            "n_blocks": 10,
        }
        values.update(overrides)
        return RunConfig(**values)

    return make
