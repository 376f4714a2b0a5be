"""Jackknife par blocs contigus de trames."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from typing import TypeVar

import numpy as np

from src.transform.jpd import AccumStats, merge_stats

T = TypeVar("T")

logger = logging.getLogger(__name__)


def leave_one_out(blocks: Sequence[AccumStats]) -> tuple[AccumStats, list[AccumStats]]:
    """Total et compléments leave-one-out (total − bloc k), en arithmétique entière."""
    total = merge_stats(blocks)
    return total, [total - block for block in blocks]


def jackknife_se(replicates: Sequence[float] | np.ndarray) -> float:
    """Erreur standard jackknife: sqrt((n−1)/n Σ (θ₍ᵢ₎ − θ̄)²)."""
    values = np.asarray(replicates, dtype=np.float64)
    n = len(values)
    if n < 2:
        logger.warning("⚠️  Moins de deux répliques: incertitude jackknife fixée à 0")
        return 0.0
    return float(np.sqrt((n - 1) / n * np.sum((values - values.mean()) ** 2)))


def jackknife(
    estimator: Callable[[T], float], total: T, replicates: Sequence[T]
) -> tuple[float, float]:
    """Estimation sur le total et erreur standard sur les répliques leave-one-out.

    Args:
        estimator: Fonction statistique → réel
        total: Statistique complète
        replicates: Statistiques leave-one-out

    Returns:
        (valeur, erreur standard)

    """
    value = float(estimator(total))
    return value, jackknife_se([estimator(rep) for rep in replicates])
