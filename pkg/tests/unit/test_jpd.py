"""Tests unitaires pour les statistiques suffisantes et Γ."""

import os
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.extract.frame_io import FrameSet, SensorGeometry, pack_frames, write_frames
from src.transform.jpd import (
    AccumStats,
    JpdView,
    accumulate,
    accumulate_blocks,
    accumulate_prefixes,
    intensity_image,
    jpd_element,
    merge_stats,
    oracle_jpd,
)
from src.utils.exceptions import GeometryMismatchError, OracleSizeError


def frames_from_pairs(bits, geometry):
    """Trames 2×2 dont seuls les pixels 0 et 1 (première ligne) varient."""
    frames = np.zeros((len(bits), 2, 2), dtype=bool)
    frames[:, 0, :] = np.asarray(bits, dtype=bool)
    return FrameSet.from_frames(frames, geometry)


def dense_reference(fs, pixels=None):
    """Statistiques calculées par produit dense, pour comparaison."""
    flat = fs.frames().reshape(fs.n_frames, fs.geometry.n_pixels).astype(np.int64)
    if pixels is not None:
        flat = flat[:, pixels]
    return flat.sum(axis=0), flat.T @ flat


def sparse_camera_frames(n_frames, seed, lit=34, geometry=None, block=65536):
    """Trames 32×64 compactées avec environ ``lit`` pixels allumés par trame."""
    geometry = geometry or SensorGeometry()
    rng = np.random.default_rng(seed)
    payloads = []
    for start in range(0, n_frames, block):
        n = min(block, n_frames - start)
        frames = np.zeros((n, geometry.n_pixels), dtype=bool)
        frames[np.arange(n)[:, None], rng.integers(0, geometry.n_pixels, size=(n, lit))] = True
        payloads.append(pack_frames(frames.reshape(n, *geometry.shape)))
    return FrameSet(geometry, n_frames, np.concatenate(payloads), "sparse")


class TestAccumulate:
    """Tests pour l'accumulation des statistiques."""

    def test_hand_example(self, two_pixel_frames):
        """Test {11,10,01,11} → S=(3,3), C₀₁=2, N=4."""
        stats = accumulate(two_pixel_frames)

        assert stats.n_frames == 4
        assert stats.marginal[:2].tolist() == [3, 3]
        assert stats.pair_counts[0, 1] == stats.pair_counts[1, 0] == 2
        assert stats.pair_counts[0, 0] == 3

    def test_all_zero(self, small_geometry):
        """Test des trames toutes éteintes → S = 0, C = 0."""
        fs = FrameSet.from_frames(np.zeros((5, 8, 8), dtype=bool), small_geometry)

        stats = accumulate(fs)

        assert stats.n_frames == 5
        assert not stats.marginal.any()
        assert not stats.pair_counts.any()

    def test_invariants(self, random_frames):
        """Test 0 ≤ S ≤ N, C ≤ min(S), Cᵢᵢ = Sᵢ et symétrie."""
        report = accumulate(random_frames(n_frames=200)).check_invariants()

        assert report["valid"]

    @settings(max_examples=20, deadline=None)
    @given(chunk_size=st.integers(1, 60), seed=st.integers(0, 1000))
    def test_chunking_independent(self, chunk_size, seed):
        """Test que le découpage en blocs ne change rien."""
        rng = np.random.default_rng(seed)
        geom = SensorGeometry(width=4, height=3)
        fs = FrameSet.from_frames(rng.random((50, 3, 4)) < 0.3, geom)

        assert accumulate(fs, chunk_size=chunk_size) == accumulate(fs, chunk_size=50)

    def test_workers_independent(self, random_frames):
        """Test l'indépendance vis-à-vis du nombre de processus."""
        fs = random_frames(n_frames=300)

        assert accumulate(fs, workers=3, chunk_size=17) == accumulate(fs)

    def test_from_file_and_iterable(self, tmp_path, random_frames):
        """Test les sources chemin et itérable de blocs."""
        fs = random_frames(n_frames=40)
        path = tmp_path / "run.spf"
        write_frames(path, fs)

        from_file = accumulate(path, chunk_size=7)
        from_iter = accumulate(iter([fs.frames()[:10], fs.frames()[10:]]))

        assert from_file == accumulate(fs)
        assert from_iter == accumulate(fs)

    def test_empty_iterable_without_geometry(self):
        """Test un flux vide sans géométrie connue."""
        with pytest.raises(ValueError):
            accumulate(iter([]))

    def test_geometry_mismatch(self, small_geometry):
        """Test le rejet d'un bloc de géométrie différente."""
        with pytest.raises(GeometryMismatchError):
            accumulate(iter([np.zeros((2, 4, 4), dtype=bool)]), geometry=small_geometry)

    def test_pixel_subset(self, random_frames):
        """Test les statistiques restreintes à un sous-ensemble de pixels."""
        fs = random_frames(n_frames=100)
        pixels = np.array([3, 10, 42])

        full = accumulate(fs)
        subset = accumulate(fs, pixels=pixels)

        assert np.array_equal(subset.marginal, full.marginal[pixels])
        assert np.array_equal(subset.pair_counts, full.pair_counts[np.ix_(pixels, pixels)])
        assert subset.local_index(42) == 2
        with pytest.raises(GeometryMismatchError):
            subset.local_index(0)

    @pytest.mark.parametrize("height,width", [(3, 5), (16, 16), (9, 30)])
    def test_matches_dense_reference(self, random_frames, height, width):
        """Test l'égalité avec le produit dense, octets de bourrage et découpage en blocs compris."""
        fs = random_frames(n_frames=211, height=height, width=width, p=0.15, seed=height)

        stats = accumulate(fs, chunk_size=64)
        marginal, pairs = dense_reference(fs)

        assert np.array_equal(stats.marginal, marginal)
        assert np.array_equal(stats.pair_counts, pairs)

    def test_unsorted_pixel_subset(self, random_frames):
        """Test un sous-ensemble de pixels donné dans le désordre."""
        fs = random_frames(n_frames=120, height=16, width=16, seed=2)
        pixels = np.array([200, 7, 131, 64, 8])

        stats = accumulate(fs, pixels=pixels, chunk_size=50)
        marginal, pairs = dense_reference(fs, pixels)

        assert np.array_equal(stats.marginal, marginal)
        assert np.array_equal(stats.pair_counts, pairs)


@pytest.mark.slow
class TestThroughput:
    """Tests de débit sur des trames creuses au format de la caméra 32×64."""

    N_FRAMES = 8 * 65536

    @pytest.fixture(scope="class")
    def camera_frames(self):
        return sparse_camera_frames(self.N_FRAMES, seed=1)

    def test_single_process_rate(self, camera_frames):
        """Test au moins 5e4 trames/s sur un seul processus (~34 pixels allumés par trame)."""
        start = time.perf_counter()
        stats = accumulate(camera_frames)
        elapsed = time.perf_counter() - start

        assert stats.n_frames == self.N_FRAMES
        assert self.N_FRAMES / elapsed >= 5e4

    @pytest.mark.skipif((os.cpu_count() or 1) < 4, reason="4 cœurs requis")
    def test_four_process_rate(self, camera_frames):
        """Test au moins 2e5 trames/s avec 4 processus, résultat identique au calcul séquentiel."""
        serial = accumulate(camera_frames.head(65536))

        start = time.perf_counter()
        stats = accumulate(camera_frames, workers=4)
        elapsed = time.perf_counter() - start

        assert self.N_FRAMES / elapsed >= 2e5
        assert accumulate(camera_frames.head(65536), workers=4) == serial
        assert stats.n_frames == self.N_FRAMES


class TestMerge:
    """Tests pour la fusion des statistiques."""

    def test_merge_equals_concatenation(self, random_frames):
        """Test accumulate(A ++ B) = accumulate(A) + accumulate(B)."""
        fs = random_frames(n_frames=90)
        a, b = fs.head(40), FrameSet(fs.geometry, 50, fs.payload[40:].copy())

        assert accumulate(a) + accumulate(b) == accumulate(fs)

    def test_associative_commutative(self, random_frames):
        """Test l'associativité et la commutativité de la fusion."""
        a, b, c = (accumulate(random_frames(n_frames=20, seed=s)) for s in range(3))

        assert (a + b) + c == a + (b + c)
        assert a + b == b + a
        assert merge_stats([a, b, c]) == a + b + c

    def test_subtraction(self, random_frames):
        """Test que (A + B) − B = A."""
        a, b = (accumulate(random_frames(n_frames=20, seed=s)) for s in range(2))

        assert (a + b) - b == a

    def test_merge_rejects_mismatch(self, random_frames):
        """Test le rejet de géométries différentes."""
        a = accumulate(random_frames(n_frames=5, height=4, width=4))
        b = accumulate(random_frames(n_frames=5))

        with pytest.raises(GeometryMismatchError):
            a + b

    def test_merge_empty_list(self):
        """Test le rejet d'une liste vide."""
        with pytest.raises(ValueError):
            merge_stats([])


class TestBlocksAndPrefixes:
    """Tests pour l'accumulation par blocs et par préfixes."""

    def test_blocks_sum_to_total(self, random_frames):
        """Test que la somme des blocs vaut le total."""
        fs = random_frames(n_frames=103)

        blocks = accumulate_blocks(fs, n_blocks=5, chunk_size=9)

        assert len(blocks) == 5
        assert [b.n_frames for b in blocks] == [20, 21, 20, 21, 21]
        assert merge_stats(blocks) == accumulate(fs)

    def test_more_blocks_than_frames(self, random_frames):
        """Test un nombre de blocs supérieur au nombre de trames."""
        blocks = accumulate_blocks(random_frames(n_frames=3), n_blocks=10)

        assert len(blocks) == 3

    def test_prefixes(self, random_frames):
        """Test les statistiques des préfixes en une seule passe."""
        fs = random_frames(n_frames=60)
        seen = []

        reached = accumulate_prefixes(fs, [10, 25, 60, 100], seen.append, chunk_size=7)

        assert reached == [10, 25, 60]
        assert [s.n_frames for s in seen] == [10, 25, 60]
        assert seen[1] == accumulate(fs.head(25))

    def test_prefixes_must_be_sorted(self, random_frames):
        """Test le rejet de checkpoints non triés."""
        with pytest.raises(ValueError):
            accumulate_prefixes(random_frames(n_frames=5), [4, 2], lambda s: None)


class TestGamma:
    """Tests pour Γ."""

    def test_hand_arithmetic(self, tiny_geometry):
        """Test {11,00,11,00} → Γ = 2/4 − 4/16 = 0.25."""
        stats = accumulate(frames_from_pairs([[1, 1], [0, 0], [1, 1], [0, 0]], tiny_geometry))

        assert jpd_element(stats, 0, 1) == 0.25

    def test_shared_fixture(self, two_pixel_frames):
        """Test {11,10,01,11} → Γ₀₁ = 2/4 − 9/16."""
        stats = accumulate(two_pixel_frames)

        assert jpd_element(stats, 0, 1) == 2 / 4 - 9 / 16

    def test_always_on_pixels(self, tiny_geometry):
        """Test deux pixels toujours allumés → Γ = 0."""
        stats = accumulate(frames_from_pairs([[1, 1]] * 5, tiny_geometry))

        assert jpd_element(stats, 0, 1) == 0.0

    def test_single_frame_is_zero(self, random_frames):
        """Test N = 1 → Γ ≡ 0."""
        fs = random_frames(n_frames=1, p=0.5)

        assert not JpdView(accumulate(fs)).matrix().any()
        assert not oracle_jpd(fs).any()

    def test_independent_pixels(self):
        """Test des pixels indépendants de taux 0.1 → |Γ| < 5e-4."""
        rng = np.random.default_rng(12)
        geom = SensorGeometry(width=2, height=2)
        fs = FrameSet.from_frames(rng.random((1_000_000, 2, 2)) < 0.1, geom)

        gamma = JpdView(accumulate(fs)).matrix()

        off_diagonal = gamma[~np.eye(4, dtype=bool)]
        assert np.abs(off_diagonal).max() < 5e-4

    def test_undefined_for_zero_frames(self, small_geometry):
        """Test Γ indéfini pour N = 0."""
        with pytest.raises(ValueError):
            JpdView(AccumStats.empty(small_geometry))

    def test_row_and_matrix_agree(self, random_frames):
        """Test la cohérence de gamma, row et matrix."""
        view = JpdView(accumulate(random_frames(n_frames=80)))
        matrix = view.matrix()

        assert np.array_equal(view.row(5), matrix[5])
        assert view.gamma(5, 9) == matrix[5, 9]
        assert np.array_equal(matrix, matrix.T)

    def test_intensity_image(self, two_pixel_frames):
        """Test l'image S/N."""
        image = intensity_image(accumulate(two_pixel_frames))

        assert image.tolist() == [[0.75, 0.75], [0.0, 0.0]]


class TestLogCorrection:
    """Tests pour la correction logarithmique."""

    def test_small_covariance_matches_linear(self, random_frames):
        """Test que la correction log ≈ linéaire pour de faibles intensités."""
        stats = accumulate(random_frames(n_frames=2000, p=0.01))

        linear = JpdView(stats).matrix()
        log = JpdView(stats, correction="log").matrix()

        off_diagonal = ~np.eye(len(linear), dtype=bool)
        assert np.allclose(log[off_diagonal], linear[off_diagonal], atol=1e-4)

    def test_log_formula(self, tiny_geometry):
        """Test Γ = A ln(1 + cov / ((1 − ⟨I₀⟩)(1 − ⟨I₁⟩)))."""
        stats = accumulate(frames_from_pairs([[1, 1], [0, 0], [1, 0], [0, 0]], tiny_geometry))
        cov = 1 / 4 - (2 * 1) / 16

        value = JpdView(stats, correction="log", scale=2.0).gamma(0, 1)

        assert value == pytest.approx(2.0 * np.log1p(cov / ((1 - 0.5) * (1 - 0.25))))

    def test_unknown_correction(self, two_pixel_frames):
        """Test le rejet d'une correction inconnue."""
        with pytest.raises(ValueError):
            JpdView(accumulate(two_pixel_frames), correction="cubic")


class TestOracle:
    """Tests pour l'oracle en double boucle."""

    def test_oracle_bitwise_equal(self, random_frames):
        """Test max |oracle − rapide| = 0 sur 8×8, N = 100."""
        fs = random_frames(n_frames=100, seed=4)

        assert np.array_equal(oracle_jpd(fs), JpdView(accumulate(fs)).matrix())

    def test_oracle_shared_fixture(self, two_pixel_frames):
        """Test que l'oracle retrouve l'exemple à la main."""
        assert oracle_jpd(two_pixel_frames)[0, 1] == 2 / 4 - 9 / 16

    def test_oracle_size_guard(self, random_frames):
        """Test le refus des entrées trop grandes."""
        with pytest.raises(OracleSizeError):
            oracle_jpd(random_frames(n_frames=2, height=40, width=40))

    def test_oracle_on_random_sets(self):
        """Test l'égalité bit à bit sur 50 FrameSet aléatoires de 8×8 à 16×16, N ≤ 1000."""
        rng = np.random.default_rng(2024)
        for _ in range(50):
            height, width = (int(v) for v in rng.integers(8, 17, size=2))
            n_frames = int(rng.integers(1, 1001))
            p = float(rng.uniform(0.01, 0.5))
            geom = SensorGeometry(width=width, height=height)
            fs = FrameSet.from_frames(rng.random((n_frames, height, width)) < p, geom)

            assert np.array_equal(oracle_jpd(fs), JpdView(accumulate(fs, chunk_size=97)).matrix())


class TestNullProperty:
    """Tests de Γ pour des pixels de Bernoulli indépendants."""

    def test_four_sigma_fraction(self):
        """Test que moins de 1e-3 des paires dépassent 4 erreurs-types à N = 1e5."""
        rng = np.random.default_rng(77)
        geom = SensorGeometry(width=16, height=16)
        rates = rng.uniform(0.02, 0.2, size=(16, 16)).astype(np.float32)
        fs = FrameSet.from_frames(rng.random((100_000, 16, 16), dtype=np.float32) < rates, geom)

        stats = accumulate(fs)
        gamma = JpdView(stats).matrix()
        p = stats.marginal / stats.n_frames
        q = p * (1 - p)
        stderr = np.sqrt(np.outer(q, q) / stats.n_frames)

        upper = np.triu_indices(geom.n_pixels, k=1)
        exceed = np.abs(gamma[upper]) > 4 * stderr[upper]
        assert exceed.mean() <= 1e-3
