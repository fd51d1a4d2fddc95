"""Ground-truth effects and the PEHE / ATE error metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, MissingPotentialOutcomes


@dataclass(frozen=True)
class EffectEstimates:
    ate_hat: float
    ite_hat: np.ndarray | None = None
    ate_from_ite: bool = False
    estimator: str = ""
    combo: str = ""

    def __post_init__(self):
        if self.ate_from_ite and self.ite_hat is not None:
            if abs(float(np.mean(self.ite_hat)) - self.ate_hat) > 1e-10:
                raise ValueError("ate_hat must equal the mean of ite_hat")


def true_effects(ds) -> tuple:
    y0 = getattr(ds, "y0", None)
    y1 = getattr(ds, "y1", None)
    if y0 is None or y1 is None:
        raise MissingPotentialOutcomes("dataset lacks y0/y1")
    ite = np.asarray(y1, dtype=float) - np.asarray(y0, dtype=float)
    return ite, float(ite.mean())


def ite_from_factual(t, y_f, y_cf) -> np.ndarray:
    """ITE written through factual and counterfactual outcomes."""
    t = np.asarray(t, dtype=float)
    return t * y_f - t * y_cf + (1 - t) * y_cf - (1 - t) * y_f


def pehe(ite_true, ite_hat) -> float:
    """Mean squared ITE error (not square-rooted)."""
    a = np.asarray(ite_true, dtype=float)
    b = np.asarray(ite_hat, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def root_pehe(ite_true, ite_hat) -> float:
    return float(np.sqrt(pehe(ite_true, ite_hat)))


def eps_ate(ate_true, ate_hat) -> float:
    return abs(float(ate_true) - float(ate_hat))
