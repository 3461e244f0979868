"""Cluster router: a supervised classifier over noisy clips that yields
top-k routing weights over experts at sampling time.

The router's inputs are the noisy clip, the timestep, and the pooled
condition only. The input width of its net is sized for the pooled vector,
so handing it a full condition vector is a hard shape error rather than a
silent information leak.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import Dataset
from .flowmatch import TrainingDivergedError, interpolate_path
from .nets import (
    NetParams,
    adam_update,
    assemble_input,
    default_router_widths,
    forward_mlp,
    init_opt_state,
    init_params,
    xent_loss_and_gradients,
)

WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RoutingWeights:
    """Convex weights over experts, nonzero exactly on the active set."""

    weights: np.ndarray
    active_set: tuple[int, ...]
    top_k: int

    def __post_init__(self):
        k = self.weights.shape[0]
        if not 1 <= self.top_k <= k:
            raise ValueError(f"top_k {self.top_k} out of range for {k} experts")
        if len(self.active_set) != min(self.top_k, k):
            raise ValueError("active set size must equal min(top_k, K)")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError("weights must be nonnegative and sum to 1")
        active = np.zeros(k, dtype=bool)
        active[list(self.active_set)] = True
        if np.any(self.weights[~active] != 0.0):
            raise ValueError("weights must be zero outside the active set")


def router_logits(net: NetParams, x_t: np.ndarray, t: float, pooled: np.ndarray) -> np.ndarray:
    """Forward pass over [x_t, time features, pooled]; width-checked."""
    return forward_mlp(net, assemble_input(x_t, t, pooled, net.widths[0]))


def route_weights(logits: np.ndarray, top_k: int) -> RoutingWeights:
    """Softmax, keep the top_k largest (ties to lowest index), renormalize."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    k = logits.shape[0]
    if not 1 <= top_k <= k:
        raise ValueError(f"top_k must be in [1, {k}], got {top_k}")
    # stable sort on -logits puts equal values in index order
    order = np.argsort(-logits, kind="stable")
    active = tuple(sorted(int(i) for i in order[:top_k]))
    shifted = logits - logits.max()
    probs = np.exp(shifted)
    weights = np.zeros(k)
    kept = probs[list(active)]
    weights[list(active)] = kept / kept.sum()
    return RoutingWeights(weights=weights, active_set=active, top_k=top_k)


def predict_cluster(net: NetParams, x_t: np.ndarray, t: float, pooled: np.ndarray) -> int:
    """Argmax of the router logits; ties go to the lowest index."""
    return int(np.argmax(router_logits(net, x_t, t, pooled)))


@dataclass(frozen=True)
class RouterTrainConfig:
    steps: int = 1500
    batch_size: int = 64
    seed: int = 0
    holdout_frac: float = 0.2
    lr: float = 1e-3
    eval_every: int = 100
    shuffle_labels: bool = False

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("steps >= 0, batch_size >= 1, eval_every >= 1 required")
        if not 0.0 < self.holdout_frac < 1.0:
            raise ValueError("holdout_frac must be in (0, 1)")


def _noisy_inputs(dataset: Dataset, idx: np.ndarray, ts: np.ndarray,
                  rng: np.random.Generator, in_width: int) -> np.ndarray:
    rows = []
    for i, t in zip(idx, ts):
        clip, cond = dataset.items[int(i)]
        x0 = clip.flat()
        x_t = interpolate_path(x0, rng.standard_normal(x0.shape[0]), float(t))
        rows.append(assemble_input(x_t, float(t), cond.pooled, in_width))
    return np.stack(rows)


def train_router(dataset: Dataset, config: RouterTrainConfig) -> tuple[NetParams, list[tuple[int, float]]]:
    """Train the classifier on noisy clips at uniform t; returns held-out accuracy trace.

    The shuffle_labels control permutes the label column of the whole dataset
    before the holdout split, so held-out accuracy is measured against labels
    carrying no feature information and sits at chance for any permutation.
    (Permuting only the training side leaves holdout scored against true
    labels, and an expressive net converges toward each class's modal permuted
    label — a quantity quantized in steps of 1/K, not pinned near 1/K.)
    """
    labels = dataset.labels()
    if set(np.unique(labels)) != set(range(dataset.config.n_clusters)):
        raise ValueError("dataset must cover every cluster")
    cfg_d = dataset.config
    widths = default_router_widths(cfg_d.clip_size, cfg_d.pooled_dim, cfg_d.n_clusters)

    seeds = np.random.SeedSequence(config.seed).spawn(4)
    split_rng = np.random.default_rng(seeds[0])
    net = init_params(widths, int(np.random.default_rng(seeds[1]).integers(2 ** 63)))
    train_rng = np.random.default_rng(seeds[2])
    eval_rng = np.random.default_rng(seeds[3])

    if config.shuffle_labels:
        labels = labels[split_rng.permutation(len(labels))]
    perm = split_rng.permutation(len(dataset))
    n_hold = max(1, int(round(config.holdout_frac * len(dataset))))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    if len(train_idx) == 0:
        raise ValueError("holdout leaves no training items")

    train_labels = labels[train_idx]

    # fixed held-out evaluation set: one (t, noise) draw per held-out item
    hold_ts = eval_rng.uniform(size=len(hold_idx))
    hold_inputs = _noisy_inputs(dataset, hold_idx, hold_ts, eval_rng, widths[0])
    hold_labels = labels[hold_idx]

    def holdout_accuracy(p: NetParams) -> float:
        pred = np.argmax(forward_mlp(p, hold_inputs), axis=1)
        return float(np.mean(pred == hold_labels))

    opt = init_opt_state(net, lr=config.lr)
    trace: list[tuple[int, float]] = []
    for step in range(config.steps):
        pick = train_rng.integers(len(train_idx), size=config.batch_size)
        ts = train_rng.uniform(size=config.batch_size)
        inputs = _noisy_inputs(dataset, train_idx[pick], ts, train_rng, widths[0])
        loss, grads = xent_loss_and_gradients(net, inputs, train_labels[pick])
        if not np.isfinite(loss):
            raise TrainingDivergedError(step, loss)
        net, opt = adam_update(net, grads, opt)
        if (step + 1) % config.eval_every == 0 or step == config.steps - 1:
            trace.append((step + 1, holdout_accuracy(net)))
    if config.steps == 0:
        trace.append((0, holdout_accuracy(net)))
    return net, trace


def accuracy_at_t(net: NetParams, dataset: Dataset, t: float, rng: np.random.Generator) -> float:
    """Classification accuracy with every item noised to the same t."""
    correct = 0
    for clip, cond in dataset.items:
        x0 = clip.flat()
        x_t = interpolate_path(x0, rng.standard_normal(x0.shape[0]), t)
        correct += predict_cluster(net, x_t, t, cond.pooled) == cond.cluster
    return correct / len(dataset)


def accuracy_by_t_bin(net: NetParams, dataset: Dataset, n_bins: int,
                      rng: np.random.Generator) -> list[tuple[float, float]]:
    """(bin upper edge, accuracy) per timestep bin, one uniform t draw per item."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    hits = np.zeros(n_bins)
    counts = np.zeros(n_bins)
    for clip, cond in dataset.items:
        t = float(rng.uniform())
        x0 = clip.flat()
        x_t = interpolate_path(x0, rng.standard_normal(x0.shape[0]), t)
        b = min(int(t * n_bins), n_bins - 1)
        counts[b] += 1
        hits[b] += predict_cluster(net, x_t, t, cond.pooled) == cond.cluster
    return [
        ((b + 1) / n_bins, float(hits[b] / counts[b]) if counts[b] else float("nan"))
        for b in range(n_bins)
    ]
