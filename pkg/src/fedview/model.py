"""From-scratch ad-viewability prediction network.

Binary + numerical inputs pass through one ReLU dense layer; each categorical
input indexes its own embedding table; the concatenation feeds five ReLU hidden
layers and a sigmoid output. Parameters live in a flat, canonically ordered
name -> array mapping so they can be averaged, serialized, and diffed without
framework baggage. All operations are pure value-in/value-out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, InputError, MetricUndefinedError, TrainingError
from .hashing import fnv1a64

N_HIDDEN_LAYERS = 5


@dataclass(frozen=True)
class ModelConfig:
    """Architecture + init-seed description; hashes into the version tag."""

    n_binary: int = 3
    n_numerical: int = 14
    n_categorical: int = 9
    hash_buckets: int = 64
    embedding_dim: int = 8
    numeric_dense_dim: int = 16
    hidden_dims: Tuple[int, ...] = (32, 16, 8, 8, 4)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    def validate(self) -> "ModelConfig":
        if len(self.hidden_dims) != N_HIDDEN_LAYERS:
            raise ConfigError(f"expected {N_HIDDEN_LAYERS} hidden layers, got {len(self.hidden_dims)}")
        counts = (self.n_binary, self.n_numerical, self.n_categorical,
                  self.embedding_dim, self.numeric_dense_dim) + self.hidden_dims
        if any(c < 1 for c in counts):
            raise ConfigError(f"all dimension counts must be >= 1: {self}")
        if self.hash_buckets < 2:
            raise ConfigError(f"hash_buckets must be >= 2, got {self.hash_buckets}")
        return self

    @property
    def concat_dim(self) -> int:
        return self.numeric_dense_dim + self.n_categorical * self.embedding_dim

    def canonical(self) -> str:
        hidden = "|".join(str(h) for h in self.hidden_dims)
        return (
            f"n_binary={self.n_binary},n_numerical={self.n_numerical},"
            f"n_categorical={self.n_categorical},hash_buckets={self.hash_buckets},"
            f"embedding_dim={self.embedding_dim},numeric_dense_dim={self.numeric_dense_dim},"
            f"hidden_dims={hidden},seed={self.seed}"
        )

    @property
    def config_hash(self) -> int:
        return fnv1a64(self.canonical())

    def to_dict(self) -> dict:
        return {
            "n_binary": self.n_binary,
            "n_numerical": self.n_numerical,
            "n_categorical": self.n_categorical,
            "hash_buckets": self.hash_buckets,
            "embedding_dim": self.embedding_dim,
            "numeric_dense_dim": self.numeric_dense_dim,
            "hidden_dims": list(self.hidden_dims),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(
                n_binary=int(d["n_binary"]),
                n_numerical=int(d["n_numerical"]),
                n_categorical=int(d["n_categorical"]),
                hash_buckets=int(d["hash_buckets"]),
                embedding_dim=int(d["embedding_dim"]),
                numeric_dense_dim=int(d["numeric_dense_dim"]),
                hidden_dims=tuple(int(h) for h in d["hidden_dims"]),
                seed=int(d["seed"]),
            ).validate()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad model config dict: {exc}") from exc


# `full` is the production-scale network; `desk` keeps tests fast.
PRESETS: Dict[str, ModelConfig] = {
    "desk": ModelConfig(),
    "full": ModelConfig(hash_buckets=2048, embedding_dim=16, numeric_dense_dim=64,
                        hidden_dims=(256, 128, 64, 32, 16)),
}


def preset(name: str, seed: int = 0) -> ModelConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[name]
    return ModelConfig(**{**base.to_dict(), "seed": seed})


def param_shapes(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Canonical (name, shape) list; this order is the serialization order."""
    config.validate()
    shapes: List[Tuple[str, Tuple[int, ...]]] = [
        ("num_dense_w", (config.n_binary + config.n_numerical, config.numeric_dense_dim)),
        ("num_dense_b", (config.numeric_dense_dim,)),
    ]
    for j in range(config.n_categorical):
        shapes.append((f"emb_{j}", (config.hash_buckets, config.embedding_dim)))
    in_dim = config.concat_dim
    for i, h in enumerate(config.hidden_dims):
        shapes.append((f"hidden_{i}_w", (in_dim, h)))
        shapes.append((f"hidden_{i}_b", (h,)))
        in_dim = h
    shapes.append(("out_w", (in_dim,)))
    shapes.append(("out_b", (1,)))
    return shapes


def param_count(config: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_shapes(config))


@dataclass
class ModelParams:
    """Named parameter arrays in canonical order plus the owning config's hash."""

    layers: Dict[str, np.ndarray]
    config_hash: int

    @property
    def dtype(self):
        return next(iter(self.layers.values())).dtype

    @property
    def count(self) -> int:
        return sum(a.size for a in self.layers.values())

    @property
    def n_categorical(self) -> int:
        return sum(1 for name in self.layers if name.startswith("emb_"))

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.layers.items()}, self.config_hash)

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: v.astype(dtype) for k, v in self.layers.items()}, self.config_hash)

    def finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.layers.values())


def init_params(config: ModelConfig, dtype=np.float32) -> ModelParams:
    """Uniform Glorot weights, zero biases; bit-reproducible per config.seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    layers: Dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config):
        if name.endswith("_b"):
            layers[name] = np.zeros(shape, dtype=dtype)
            continue
        if len(shape) == 2:
            fan_in, fan_out = shape
        else:  # output weight vector: last hidden dim -> 1
            fan_in, fan_out = shape[0], 1
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        layers[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return ModelParams(layers, config.config_hash)


def zeros_like(params: ModelParams) -> Dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.layers.items()}


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _stack_batch(params: ModelParams, batch: Sequence) -> Tuple[np.ndarray, np.ndarray]:
    """Samples -> (numeric matrix, categorical index matrix), validated."""
    if len(batch) == 0:
        raise InputError("empty batch")
    n_in, dense = params.layers["num_dense_w"].shape
    ncat = params.n_categorical
    buckets = params.layers["emb_0"].shape[0] if ncat else 0
    xnum = np.empty((len(batch), n_in), dtype=params.dtype)
    xcat = np.empty((len(batch), ncat), dtype=np.int64)
    for i, s in enumerate(batch):
        if len(s.binary) + len(s.numerical) != n_in or len(s.categorical) != ncat:
            raise InputError(
                f"sample {i} partition sizes ({len(s.binary)},{len(s.numerical)},"
                f"{len(s.categorical)}) do not match model ({n_in} numeric inputs, {ncat} categorical)")
        xnum[i, : len(s.binary)] = s.binary
        xnum[i, len(s.binary):] = s.numerical
        xcat[i] = s.categorical
    if ncat and (xcat.min() < 0 or xcat.max() >= buckets):
        raise InputError(f"categorical index out of range [0, {buckets})")
    return xnum, xcat


def _forward_arrays(params: ModelParams, xnum: np.ndarray, xcat: np.ndarray) -> dict:
    L = params.layers
    ncat = params.n_categorical
    cache: dict = {"xnum": xnum, "xcat": xcat}
    z0 = xnum @ L["num_dense_w"] + L["num_dense_b"]
    h0 = _relu(z0)
    embs = [L[f"emb_{j}"][xcat[:, j]] for j in range(ncat)]
    concat = np.concatenate([h0] + embs, axis=1)
    cache.update(z0=z0, concat=concat)
    a = concat
    zs, acts = [], [concat]
    i = 0
    while f"hidden_{i}_w" in L:
        z = a @ L[f"hidden_{i}_w"] + L[f"hidden_{i}_b"]
        a = _relu(z)
        zs.append(z)
        acts.append(a)
        i += 1
    zout = a @ L["out_w"] + L["out_b"][0]
    cache.update(zs=zs, acts=acts, zout=zout, probs=_sigmoid(zout))
    return cache


def forward(params: ModelParams, batch: Sequence) -> np.ndarray:
    """Predicted viewability probability per sample, order-preserving."""
    xnum, xcat = _stack_batch(params, batch)
    return _forward_arrays(params, xnum, xcat)["probs"]


LOSS_CLAMP = 1e-7


def bce_loss(preds: Sequence[float], labels: Sequence[int]) -> float:
    """Mean binary cross-entropy with predictions clamped away from {0, 1}."""
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise InputError("bce_loss on empty input")
    if p.shape != y.shape:
        raise InputError(f"preds/labels length mismatch: {p.shape} vs {y.shape}")
    p = np.clip(p, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def _backward_arrays(params: ModelParams, xnum: np.ndarray, xcat: np.ndarray,
                     y: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Exact gradients of mean BCE; returns (grads, probs)."""
    L = params.layers
    cache = _forward_arrays(params, xnum, xcat)
    probs = cache["probs"]
    batch = xnum.shape[0]
    ncat = params.n_categorical
    dense = L["num_dense_w"].shape[1]
    grads: Dict[str, np.ndarray] = {}

    dz = (probs - y.astype(probs.dtype)) / batch  # BCE o sigmoid
    a_last = cache["acts"][-1]
    grads["out_w"] = a_last.T @ dz
    grads["out_b"] = np.array([dz.sum()], dtype=params.dtype)
    da = np.outer(dz, L["out_w"])

    n_hidden = len(cache["zs"])
    for i in range(n_hidden - 1, -1, -1):
        dzh = da * (cache["zs"][i] > 0)
        grads[f"hidden_{i}_w"] = cache["acts"][i].T @ dzh
        grads[f"hidden_{i}_b"] = dzh.sum(axis=0)
        da = dzh @ L[f"hidden_{i}_w"].T

    dh0 = da[:, :dense]
    dz0 = dh0 * (cache["z0"] > 0)
    grads["num_dense_w"] = xnum.T @ dz0
    grads["num_dense_b"] = dz0.sum(axis=0)

    emb_dim = L["emb_0"].shape[1] if ncat else 0
    demb = da[:, dense:].reshape(batch, ncat, emb_dim) if ncat else None
    for j in range(ncat):
        g = np.zeros_like(L[f"emb_{j}"])
        np.add.at(g, xcat[:, j], demb[:, j, :])
        grads[f"emb_{j}"] = g

    grads = {name: grads[name].astype(params.dtype, copy=False) for name in L}
    return grads, probs


def backward(params: ModelParams, batch: Sequence, labels: Sequence[int]) -> Dict[str, np.ndarray]:
    """Analytic gradients of the mean BCE loss w.r.t. every parameter."""
    xnum, xcat = _stack_batch(params, batch)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (len(batch),):
        raise InputError(f"labels shape {y.shape} does not match batch size {len(batch)}")
    grads, _ = _backward_arrays(params, xnum, xcat, y)
    return grads


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators plus hyperparameters."""

    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        return cls(m=zeros_like(params), v=zeros_like(params), t=0,
                   lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)


def _check_shapes(params: ModelParams, grads: Dict[str, np.ndarray]) -> None:
    if set(grads) != set(params.layers):
        raise InputError("gradient layer names do not match parameters")
    for name, arr in params.layers.items():
        if grads[name].shape != arr.shape:
            raise InputError(f"gradient shape mismatch for {name}: {grads[name].shape} vs {arr.shape}")


def adam_step(params: ModelParams, grads: Dict[str, np.ndarray],
              state: AdamState) -> Tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; functional, returns new params and state."""
    _check_shapes(params, grads)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_layers, new_m, new_v = {}, {}, {}
    for name, p in params.layers.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        step = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        new_layers[name] = (p - step).astype(params.dtype, copy=False)
        new_m[name] = m
        new_v[name] = v
    return (ModelParams(new_layers, params.config_hash),
            AdamState(new_m, new_v, t, state.lr, b1, b2, state.epsilon))


def sgd_step(params: ModelParams, grads: Dict[str, np.ndarray], lr: float) -> ModelParams:
    """Plain gradient step; the cross-implementation training parity oracle."""
    _check_shapes(params, grads)
    return ModelParams(
        {name: (p - lr * grads[name]).astype(params.dtype, copy=False)
         for name, p in params.layers.items()},
        params.config_hash,
    )


def train_local(params: ModelParams, dataset: Sequence, rounds: int, batch_size: int,
                seed: int, lr: float = 1e-3) -> Tuple[ModelParams, List[float]]:
    """Run `rounds` full passes of Adam over the dataset with seeded shuffling.

    Returns the final parameters and the per-round mean training loss trace.
    Deterministic for a fixed (params, dataset, rounds, batch_size, seed).
    """
    if len(dataset) == 0:
        raise TrainingError("cannot train on an empty dataset")
    if rounds < 1:
        raise InputError(f"rounds must be >= 1, got {rounds}")
    if batch_size < 1:
        raise InputError(f"batch_size must be >= 1, got {batch_size}")
    xnum, xcat = _stack_batch(params, dataset)
    y = np.asarray([s.label_viewable for s in dataset], dtype=np.float64)
    rng = np.random.default_rng(seed)
    state = AdamState.for_params(params, lr=lr)
    losses: List[float] = []
    n = len(dataset)
    for _ in range(rounds):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            grads, probs = _backward_arrays(params, xnum[idx], xcat[idx], y[idx])
            total += bce_loss(probs, y[idx]) * len(idx)
            params, state = adam_step(params, grads, state)
        losses.append(total / n)
    if not params.finite():
        raise TrainingError("training produced non-finite parameters")
    return params, losses


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: concordant pairs + half of ties over pos*neg pairs."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    npos = int((y == 1).sum())
    nneg = int((y == 0).sum())
    if npos == 0 or nneg == 0:
        raise MetricUndefinedError("AUC needs at least one positive and one negative label")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    i = 0
    while i < len(s):
        j = i
        while j < len(s) and s[order[j]] == s[order[i]]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0  # average rank, 1-based
        i = j
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - npos * (npos + 1) / 2.0) / (npos * nneg))


@dataclass
class EvalReport:
    loss: float
    accuracy: float
    auc: "float | None"
    n_samples: int


def evaluate(params: ModelParams, dataset: Sequence) -> EvalReport:
    """Loss, threshold-0.5 accuracy, and AUC (None when single-class)."""
    if len(dataset) == 0:
        raise InputError("evaluate on empty dataset")
    probs = forward(params, dataset)
    y = np.asarray([s.label_viewable for s in dataset])
    loss = bce_loss(probs, y)
    # tie at exactly 0.5 predicts negative
    accuracy = float(np.mean((probs > 0.5).astype(int) == y))
    try:
        auc_value: "float | None" = auc(probs, y)
    except MetricUndefinedError:
        auc_value = None
    return EvalReport(loss=loss, accuracy=accuracy, auc=auc_value, n_samples=len(dataset))
