"""Exceptions du toolkit SPAD."""


class SpadCorrError(Exception):
    """Erreur de base du toolkit."""


class FrameFormatError(SpadCorrError, ValueError):
    """Fichier SPF1 invalide (signature, en-tête ou charge utile tronquée)."""


class GeometryMismatchError(SpadCorrError, ValueError):
    """Géométries de capteur incompatibles."""


class OracleSizeError(SpadCorrError, ValueError):
    """Entrée trop grande pour l'oracle en double boucle."""


class FitConvergenceError(SpadCorrError, RuntimeError):
    """L'ajustement gaussien n'a pas convergé."""


class UnitMismatchError(SpadCorrError, ValueError):
    """Unités physiques incompatibles entre les deux configurations."""


class GridError(SpadCorrError, ValueError):
    """Grille de modes hors capteur ou incompatible avec les statistiques."""


class ConfigError(SpadCorrError, ValueError):
    """Configuration de run invalide."""
