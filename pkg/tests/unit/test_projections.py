"""Tests unitaires pour les projections de Γ."""

import dataclasses

import numpy as np
import pytest

from src.analysis.resampling import jackknife_se, leave_one_out
from src.extract.frame_io import FrameSet, SensorGeometry
from src.simulate.spdc import SPDCSimulator, simulate_run
from src.transform.jpd import accumulate, accumulate_blocks
from src.transform.projections import (
    background_snr,
    conditional_projection,
    minus_projection,
    sum_projection,
)
from src.utils.exceptions import GeometryMismatchError, GridError


@pytest.fixture
def two_frame_stats(tiny_geometry):
    """Capteur 2×2, pixels 0 et 1 allumés ensemble une trame sur deux."""
    frames = np.zeros((2, 2, 2), dtype=bool)
    frames[0, 0, :] = True
    return accumulate(FrameSet.from_frames(frames, tiny_geometry))


@pytest.fixture
def far_field_stats(small_source, ideal_detector, sensor_geometry):
    """Statistiques d'un run FF court (paires anti-corrélées)."""
    fs = simulate_run(small_source, ideal_detector, sensor_geometry, "FF", 20_000, rng_seed=21)
    return accumulate(fs)


class TestSumMinusProjections:
    """Tests pour les projections somme et différence."""

    def test_grid_shape_and_center(self, random_frames):
        """Test la grille (2H−1)×(2W−1) centrée en (H−1, W−1)."""
        stats = accumulate(random_frames(n_frames=20, height=5, width=7))

        proj = sum_projection(stats)

        assert proj.shape == (9, 13)
        assert proj.center_index == (4, 6)
        assert proj.n_frames_used == 20

    def test_hand_example_sum(self, two_frame_stats):
        """Test {11,00}: P₊ au bin s = (0, 1) vaut 2 × 0.25 = 0.5."""
        proj = sum_projection(two_frame_stats)

        assert proj.values[0, 1] == pytest.approx(0.5)
        assert np.abs(proj.values).sum() == pytest.approx(0.5)

    def test_hand_example_minus(self, two_frame_stats):
        """Test {11,00}: P₋ vaut 0.25 en d = (0, ±1)."""
        proj = minus_projection(two_frame_stats)

        assert proj.values[1, 0] == pytest.approx(0.25)
        assert proj.values[1, 2] == pytest.approx(0.25)
        assert proj.values[1, 1] == 0.0

    def test_minus_symmetry(self, random_frames):
        """Test P₋(d) = P₋(−d) exactement."""
        proj = minus_projection(accumulate(random_frames(n_frames=150, seed=3)))

        assert np.array_equal(proj.values, proj.values[::-1, ::-1])

    def test_minus_center_zero(self, random_frames):
        """Test que le bin central de P₋ est mis à zéro."""
        proj = minus_projection(accumulate(random_frames(n_frames=50)))

        assert proj.values[proj.center_index] == 0.0

    @pytest.mark.parametrize("project", [sum_projection, minus_projection])
    def test_fast_matches_direct(self, random_frames, project):
        """Test l'accord des chemins direct et spectral à 1e-9 près."""
        stats = accumulate(random_frames(n_frames=300, height=6, width=9, p=0.3, seed=8))

        fast = project(stats, method="fast").values
        direct = project(stats, method="direct").values

        assert np.allclose(fast, direct, rtol=1e-9, atol=1e-12)

    def test_unknown_method(self, random_frames):
        """Test le rejet d'une méthode inconnue."""
        with pytest.raises(ValueError):
            sum_projection(accumulate(random_frames(n_frames=5)), method="slow")

    def test_subset_rejected(self, random_frames):
        """Test le refus de projeter des statistiques restreintes."""
        stats = accumulate(random_frames(n_frames=5), pixels=np.arange(4))

        with pytest.raises(GeometryMismatchError):
            minus_projection(stats)

    def test_far_field_sum_peak(self, far_field_stats):
        """Test le pic central de P₊ pour des paires anti-corrélées."""
        proj = sum_projection(far_field_stats)

        peak = np.unravel_index(int(np.argmax(proj.values)), proj.shape)
        assert peak == proj.center_index
        assert proj.snr > 10

    def test_sum_integral_matches_ledger(self, small_source, ideal_detector, sensor_geometry):
        """Test ΣP₊ × N ≈ nombre de paires détectées dans deux pixels distincts (×2)."""
        sim = SPDCSimulator(small_source, ideal_detector, sensor_geometry, "FF", rng_seed=17)
        stats = accumulate(sim.run(50_000))

        integral = sum_projection(stats).values.sum() * stats.n_frames

        assert integral == pytest.approx(2 * sim.ledger.split_pairs, rel=0.05)

    def test_noise_map(self, random_frames):
        """Test la carte de bruit attendu: même grille, nulle au centre de P₋."""
        stats = accumulate(random_frames(n_frames=200, p=0.1))

        plus, minus = sum_projection(stats), minus_projection(stats)

        assert plus.noise.shape == plus.shape
        assert minus.noise[minus.center_index] == 0.0
        assert np.all(plus.standardized()[plus.noise == 0] == 0.0)

    def test_projection_fields(self, random_frames):
        """Test les champs d'une projection: pas de table d'offsets, bruit inclus."""
        proj = sum_projection(accumulate(random_frames(n_frames=50, p=0.1)))

        names = {field.name for field in dataclasses.fields(proj)}

        assert names == {"kind", "values", "center_index", "n_frames_used", "anchor", "snr", "noise"}

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(10))
    def test_independent_frames_no_peak(self, seed):
        """Test qu'aucune projection ne dépasse 5 écarts-types pour des trames de Bernoulli 32×64."""
        rng = np.random.default_rng(seed)
        geom = SensorGeometry()
        p = 34 / geom.n_pixels
        frames = rng.random((20_000, *geom.shape), dtype=np.float32) < p

        stats = accumulate(FrameSet.from_frames(frames, geom))

        assert sum_projection(stats).snr < 5
        assert minus_projection(stats).snr < 5

    @pytest.mark.slow
    def test_accidentals_subtracted(self, small_source, ideal_detector, sensor_geometry):
        """Test qu'un µ doublé laisse le pic de P₊ par paire générée inchangé à 3 erreurs-types."""

        def peak_per_pair(mu, seed):
            source = small_source.model_copy(update={"mean_pairs_per_frame": mu})
            fs = simulate_run(source, ideal_detector, sensor_geometry, "FF", 200_000, rng_seed=seed)
            total, complements = leave_one_out(accumulate_blocks(fs, n_blocks=10))
            center = sum_projection(total).center_index

            def peak(stats):
                return sum_projection(stats).values[center] / mu

            return peak(total), jackknife_se([peak(c) for c in complements])

        single, single_se = peak_per_pair(0.1, 31)
        double, double_se = peak_per_pair(0.2, 32)

        assert single > 0
        assert abs(double - single) < 3 * np.hypot(single_se, double_se)


class TestConditionalProjection:
    """Tests pour les projections conditionnelles."""

    def test_anchor_bin_zero(self, random_frames):
        """Test que le bin de l'ancre est mis à zéro."""
        proj = conditional_projection(accumulate(random_frames(n_frames=50)), (2, 3))

        assert proj.values[2, 3] == 0.0
        assert proj.anchor == (2, 3)
        assert proj.shape == (8, 8)

    def test_flat_anchor(self, random_frames):
        """Test une ancre donnée en indice plat."""
        stats = accumulate(random_frames(n_frames=50))

        by_flat = conditional_projection(stats, 19)
        by_pair = conditional_projection(stats, (2, 3))

        assert np.array_equal(by_flat.values, by_pair.values)

    @pytest.mark.parametrize("anchor", [(8, 0), (0, -1), 64])
    def test_anchor_out_of_bounds(self, random_frames, anchor):
        """Test le rejet d'une ancre hors capteur."""
        with pytest.raises(GridError):
            conditional_projection(accumulate(random_frames(n_frames=5)), anchor)

    def test_anticorrelated_peak(self, far_field_stats):
        """Test le pic au point réfléchi par le centre du capteur."""
        proj = conditional_projection(far_field_stats, (4, 4))

        peak = np.unravel_index(int(np.argmax(proj.values)), proj.shape)
        assert peak == (7, 7)

    def test_independent_pixels_no_peak(self, random_frames):
        """Test qu'aucun bin ne dépasse 5 écarts-types pour des pixels indépendants."""
        stats = accumulate(random_frames(n_frames=5000, height=16, width=16, p=0.2, seed=5))

        proj = conditional_projection(stats, (8, 8))

        assert proj.snr < 5


class TestBackgroundSnr:
    """Tests pour le SNR de fond."""

    def test_peak_over_noise(self):
        """Test SNR = pic / écart-type du fond."""
        values = np.zeros((21, 21))
        values[::2, ::2] = 1.0
        values[10, 10] = 50.0

        snr, peak = background_snr(values)

        far = np.hypot(*np.indices(values.shape) - np.array([10, 10])[:, None, None]) > 5
        assert peak == (10, 10)
        assert snr == pytest.approx(50.0 / values[far].std())

    def test_flat_background(self):
        """Test un fond constant → SNR infini."""
        values = np.zeros((15, 15))
        values[7, 7] = 1.0

        assert background_snr(values)[0] == float("inf")

    def test_standardized_background(self):
        """Test un fond hétéroscédastique divisé bin par bin par son écart-type attendu."""
        rng = np.random.default_rng(3)
        rows, cols = np.indices((21, 21))
        noise = 1.0 + 9.0 * np.exp(-((rows - 10) ** 2 + (cols - 10) ** 2) / 20.0)
        values = noise * rng.standard_normal((21, 21))
        values[10, 10] = 60.0

        snr, peak = background_snr(values, noise=noise)

        z = values / noise
        far = np.hypot(rows - 10, cols - 10) > 5
        assert peak == (10, 10)
        assert snr == pytest.approx(z[10, 10] / z[far].std())

    def test_zero_noise_bins_ignored(self):
        """Test que les bins de bruit attendu nul sont exclus du fond."""
        rows, cols = np.indices((15, 15))
        values = np.where((rows + cols) % 2 == 0, 1.0, -1.0)
        values[7, 7] = 4.0
        values[0, :] = -50.0
        noise = np.ones((15, 15))
        noise[0, :] = 0.0

        snr, peak = background_snr(values, noise=noise)

        far = (np.hypot(rows - 7, cols - 7) > 5) & (rows > 0)
        assert peak == (7, 7)
        assert snr == pytest.approx(4.0 / values[far].std())
