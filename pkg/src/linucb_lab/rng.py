"""Per-trial random streams.

Each trial owns a Philox generator keyed by ``splitmix64(base_seed ^
splitmix64(trial_index))``.  Everything random in a trial is drawn up front in a
fixed order: the initial estimate, the ``T`` noise values, then a small pool of
unit vectors used when a ridge estimate degenerates to zero.  Gaussian draws use
numpy's ziggurat sampler, so streams are stable for a given numpy release.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigencore import random_unit
from .engine import draw_noise

MASK64 = (1 << 64) - 1
FALLBACK_POOL = 16


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def trial_seed(base_seed: int, trial_index: int) -> int:
    return splitmix64((base_seed & MASK64) ^ splitmix64(trial_index & MASK64))


def trial_generator(base_seed: int, trial_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=trial_seed(base_seed, trial_index)))


@dataclass(frozen=True)
class TrialStreams:
    theta_hat0: np.ndarray
    noise: np.ndarray
    fallback: np.ndarray


def draw_streams(config, trial_index: int) -> TrialStreams:
    gen = trial_generator(config.base_seed, trial_index)
    h0 = random_unit(gen, config.d)
    if config.theta_hat0 is not None:
        h0 = config.theta_hat0.copy()
    noise = np.ascontiguousarray(draw_noise(config.noise_kind, config.sigma, gen, config.T), dtype=float)
    pool = np.array([random_unit(gen, config.d) for _ in range(FALLBACK_POOL)])
    return TrialStreams(h0, noise, pool)
