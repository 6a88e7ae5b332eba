"""Client-side differential privacy for uploaded parameters.

The local-minus-global delta is L2-clipped over the full flattened parameter
vector, then perturbed with i.i.d. Gaussian noise calibrated for (epsilon,
delta)-DP per release. The budget is per uploaded update; cross-round
composition is reported by the experiment tooling, not enforced here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .errors import ConfigError, InputError
from .model import ModelParams


@dataclass(frozen=True)
class DPConfig:
    epsilon: float
    delta: float = 1e-5
    clip_norm: float = 1.0
    enabled: bool = True
    seed: int = 0

    def validate(self) -> "DPConfig":
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must be in (0, 1), got {self.delta}")
        if not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be > 0, got {self.clip_norm}")
        return self


def flat_l2_norm(delta: Dict[str, np.ndarray]) -> float:
    """L2 norm of the whole delta treated as one flattened vector."""
    total = 0.0
    for arr in delta.values():
        a = arr.astype(np.float64, copy=False)
        total += float(np.dot(a.ravel(), a.ravel()))
    return math.sqrt(total)


def clip_delta(delta: Dict[str, np.ndarray], clip_norm: float) -> Dict[str, np.ndarray]:
    """Scale the delta by min(1, clip_norm / ||delta||) so its norm is bounded."""
    norm = flat_l2_norm(delta)
    if norm <= clip_norm:
        return {k: v.copy() for k, v in delta.items()}
    factor = clip_norm / norm
    return {k: (v * factor).astype(v.dtype, copy=False) for k, v in delta.items()}


def noise_sigma(epsilon: float, delta: float, clip_norm: float) -> float:
    """Gaussian-mechanism scale: C * sqrt(2 ln(1.25/delta)) / epsilon."""
    return clip_norm * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def privatize_update(local: ModelParams, global_params: ModelParams, dp: DPConfig,
                     seed: "int | None" = None) -> ModelParams:
    """Produce the upload-safe parameters: global + clip(local - global) + noise.

    With dp.enabled False the local parameters pass through untouched. The
    noise generator is seeded (dp.seed unless an explicit per-upload seed is
    given) so experiments are reproducible.
    """
    if not dp.enabled:
        return local
    dp.validate()
    if set(local.layers) != set(global_params.layers):
        raise InputError("local/global parameter layers do not match")
    for name in local.layers:
        if local.layers[name].shape != global_params.layers[name].shape:
            raise InputError(f"shape mismatch for {name}")
    delta = {name: local.layers[name].astype(np.float64) - global_params.layers[name].astype(np.float64)
             for name in local.layers}
    clipped = clip_delta(delta, dp.clip_norm)
    sigma = noise_sigma(dp.epsilon, dp.delta, dp.clip_norm)
    rng = np.random.default_rng(dp.seed if seed is None else seed)
    dtype = local.dtype
    layers = {}
    for name, g in global_params.layers.items():
        noise = rng.normal(0.0, sigma, size=g.shape)
        layers[name] = (g.astype(np.float64) + clipped[name] + noise).astype(dtype)
    return ModelParams(layers, local.config_hash)
