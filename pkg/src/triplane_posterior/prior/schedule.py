"""
DDPM noise schedule and the closed-form forward process.

PURPOSE: Linear beta schedule, cumulative products, posterior variance and the
    noising / clean-estimate identities shared by training and sampling
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- Arrays are indexed by timestep t = 1..T through accessor methods; internally they are
  stored 0-based
- alpha_bar is the direct product of (1 - beta); exp(-sum beta) is only an approximation
- beta_tilde_t = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t, with beta_tilde_1 = beta_1
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep constants of a linear-beta DDPM."""

    T: int
    beta_start: float
    beta_end: float
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    beta_tildes: np.ndarray

    def _check(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise ValueError(f"Timestep {t} outside 1..{self.T}")
        return t - 1

    def beta(self, t: int) -> float:
        return float(self.betas[self._check(t)])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check(t)])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self._check(t)])

    def beta_tilde(self, t: int) -> float:
        return float(self.beta_tildes[self._check(t)])

    def metadata(self) -> dict[str, Any]:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end, "kind": "linear"}

    @classmethod
    def from_metadata(cls, meta: dict[str, Any]) -> NoiseSchedule:
        return build_schedule(int(meta["T"]), float(meta["beta_start"]), float(meta["beta_end"]))


def build_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> NoiseSchedule:
    """Linear schedule from beta_start to beta_end over T steps."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"Need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")

    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    beta_tildes = betas.copy()
    if T > 1:
        beta_tildes[1:] = (1.0 - alpha_bars[:-1]) / (1.0 - alpha_bars[1:]) * betas[1:]
    for arr in (betas, alphas, alpha_bars, beta_tildes):
        arr.setflags(write=False)
    return NoiseSchedule(T, beta_start, beta_end, betas, alphas, alpha_bars, beta_tildes)


def q_sample(z0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps."""
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def predict_x0(x_t: np.ndarray, eps: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """One-shot clean estimate (x_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t)."""
    ab = schedule.alpha_bar(t)
    return (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def posterior_mean(x_t: np.ndarray, eps: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """Mean of x_{t-1}: (x_t - beta_t / sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_t)."""
    beta = schedule.beta(t)
    return (x_t - beta / np.sqrt(1.0 - schedule.alpha_bar(t)) * eps) / np.sqrt(schedule.alpha(t))
