"""Tests unitaires pour la configuration des runs."""

import pytest
from pydantic import ValidationError

from src.utils.config import PRESET_DIR, RunConfig, dump_config, load_config, preset_path
from src.utils.exceptions import ConfigError


class TestPresets:
    """Tests pour les presets fournis."""

    @pytest.mark.parametrize("name", ["paper-ff", "paper-nf", "paper-both", "separable"])
    def test_presets_load(self, name):
        """Test le chargement de chaque preset."""
        cfg = load_config(preset=name)

        assert cfg.geometry.n_pixels == 2048
        assert cfg.source.delta_r_true == pytest.approx(4.3)
        assert cfg.detector.quantum_efficiency == pytest.approx(0.09)
        assert cfg.seed == 7

    def test_full_preset(self):
        """Test l'étude de confiance et la grille 14×14 du preset complet."""
        cfg = load_config(preset="paper-both")

        assert cfg.modes == ["NF", "FF"]
        assert cfg.checkpoints[0] == 1000
        assert cfg.checkpoints[-1] == 1_000_000
        assert (cfg.grid.side, cfg.grid.spacing) == (14, 1)
        assert cfg.n_blocks == 20

    def test_separable(self):
        """Test le témoin négatif."""
        assert load_config(preset="separable").source.separable

    def test_entangled_small_preset(self):
        """Test le preset réduit du témoin: capteur 12×12, grille 4×4, détecteur idéal."""
        cfg = load_config(preset="entangled-small")

        assert cfg.geometry.shape == (12, 12)
        assert (cfg.grid.side, cfg.grid.spacing) == (4, 1)
        assert cfg.detector.detection_probability == pytest.approx(1.0)
        assert not cfg.source.separable
        assert cfg.source.delta_r_true * cfg.source.delta_k_true < 0.5

    def test_unknown_preset(self):
        """Test le rejet d'un preset inconnu."""
        with pytest.raises(ConfigError, match="paper-ff"):
            preset_path("missing")

    def test_preset_dir(self):
        """Test l'emplacement des presets."""
        assert (PRESET_DIR / "paper-ff.env").exists()


class TestLoadConfig:
    """Tests pour load_config."""

    def test_defaults(self):
        """Test les valeurs par défaut."""
        cfg = load_config()

        assert cfg.mode == "both"
        assert cfg.geometry.width == 64
        assert cfg.grid.side == 14
        assert cfg.checkpoints == []

    def test_overrides_win(self):
        """Test la priorité des surcharges sur le preset."""
        cfg = load_config(preset="paper-ff", n_frames=500, seed=None)

        assert cfg.n_frames == 500
        assert cfg.seed == 7
        assert cfg.modes == ["FF"]

    def test_file_over_preset(self, tmp_path):
        """Test la priorité du fichier sur le preset."""
        path = tmp_path / "run.env"
        path.write_text("SPADCORR_SEED=11\nSPADCORR_SOURCE__DELTA_R_TRUE=5.0\n", encoding="utf-8")

        cfg = load_config(path, preset="paper-nf")

        assert cfg.seed == 11
        assert cfg.source.delta_r_true == pytest.approx(5.0)
        assert cfg.mode == "NF"

    def test_environment(self, monkeypatch):
        """Test la lecture des variables d'environnement préfixées."""
        monkeypatch.setenv("SPADCORR_N_BLOCKS", "5")
        monkeypatch.setenv("SPADCORR_GRID__SIDE", "6")

        cfg = load_config()

        assert cfg.n_blocks == 5
        assert cfg.grid.side == 6

    def test_missing_file(self, tmp_path):
        """Test un fichier de configuration absent."""
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent.env")

    @pytest.mark.parametrize("checkpoints", [[100, 10], [0, 10], [10, 10]])
    def test_bad_checkpoints(self, checkpoints):
        """Test le rejet de points de contrôle non strictement croissants."""
        with pytest.raises(ValidationError):
            load_config(checkpoints=checkpoints)

    def test_unknown_key(self, tmp_path):
        """Test le rejet d'une clé inconnue."""
        path = tmp_path / "run.env"
        path.write_text("SPADCORR_COLOUR=blue\n", encoding="utf-8")

        with pytest.raises(ValidationError):
            load_config(path)

    def test_output_dir_is_file(self, tmp_path):
        """Test le rejet d'un répertoire de sortie qui est un fichier."""
        target = tmp_path / "file"
        target.write_text("x", encoding="utf-8")

        with pytest.raises(ValidationError):
            load_config(output_dir=target)


class TestDumpConfig:
    """Tests pour dump_config."""

    def test_reload(self, tmp_path, small_config):
        """Test que la configuration sérialisée se relit à l'identique."""
        cfg = small_config(checkpoints=[100, 1000], anchors=[(3, 4)])
        path = tmp_path / "dumped.env"
        path.write_text(dump_config(cfg), encoding="utf-8")

        loaded = load_config(path)

        assert loaded == cfg

    def test_keys(self, small_config):
        """Test les clés imbriquées au format préfixé."""
        text = dump_config(small_config())

        assert "SPADCORR_GEOMETRY__WIDTH=12\n" in text
        assert "SPADCORR_GRID__SIDE=4\n" in text
        assert "SPADCORR_GRID__ORIGIN" not in text

    def test_from_file(self, tmp_path, small_config):
        """Test RunConfig.from_file sur une configuration sérialisée."""
        cfg = small_config()
        path = tmp_path / "run.env"
        path.write_text(dump_config(cfg), encoding="utf-8")

        assert RunConfig.from_file(path) == cfg
