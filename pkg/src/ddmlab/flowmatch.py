"""Flow-matching training: linear noise path, velocity targets, training arms.

The path runs from data at t=0 to noise at t=1; the regression target is the
path derivative eps - x0. Two arm kinds share one loop: per-cluster experts
(each confined to its own cluster's items) and a monolithic net trained on
the union. Arms read nothing but their arguments, so they can run in any
order or in parallel and produce bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .datagen import Dataset
from .nets import NetParams, adam_update, init_opt_state, loss_and_gradients

ARM_KINDS = ("expert", "monolithic")


class TrainingDivergedError(RuntimeError):
    """Raised when a training step produces a non-finite loss."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True, eq=False)
class FlowBatchItem:
    """One training example on the noise path; cluster kept for batch audits."""

    x0: np.ndarray
    eps: np.ndarray
    t: float
    cond: np.ndarray
    x_t: np.ndarray
    target: np.ndarray
    cluster: int


@dataclass(frozen=True)
class TrainArmConfig:
    """One training arm: an expert bound to a cluster, or the monolithic union."""

    kind: str
    steps: int
    batch_size: int
    p_drop: float = 0.1
    seed: int = 0
    cluster: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ARM_KINDS:
            raise ValueError(f"kind must be one of {ARM_KINDS}, got {self.kind!r}")
        if self.kind == "expert" and self.cluster is None:
            raise ValueError("expert arm needs a cluster index")
        if self.kind == "monolithic" and self.cluster is not None:
            raise ValueError("monolithic arm takes no cluster index")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError(f"p_drop must be in [0, 1), got {self.p_drop}")


def interpolate_path(x0: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    """Point on the linear path: (1-t)*x0 + t*eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch {x0.shape} vs {eps.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    return (1.0 - t) * x0 + t * eps


def target_velocity(x0: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Path derivative eps - x0, independent of t."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch {x0.shape} vs {eps.shape}")
    return eps - x0


def make_flow_batch(
    dataset: Dataset,
    batch_size: int,
    p_drop: float,
    rng: np.random.Generator,
    time_sampler: Optional[Callable[[np.random.Generator], float]] = None,
) -> list[FlowBatchItem]:
    """Sample a batch with replacement; t uniform unless a sampler is given.

    With probability p_drop the condition is replaced by the all-zeros null
    condition, which is what classifier-free guidance trains against.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if not 0.0 <= p_drop < 1.0:
        raise ValueError(f"p_drop must be in [0, 1), got {p_drop}")
    items = []
    for idx in rng.integers(len(dataset), size=batch_size):
        clip, cond = dataset.items[idx]
        x0 = clip.flat()
        eps = rng.standard_normal(x0.shape[0])
        t = float(rng.uniform()) if time_sampler is None else float(time_sampler(rng))
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"time sampler produced t={t} outside [0, 1]")
        cvec = np.zeros_like(cond.full) if rng.uniform() < p_drop else cond.full
        items.append(FlowBatchItem(
            x0=x0, eps=eps, t=t, cond=cvec,
            x_t=interpolate_path(x0, eps, t),
            target=target_velocity(x0, eps),
            cluster=cond.cluster,
        ))
    return items


def arm_dataset(config: TrainArmConfig, dataset: Dataset) -> Dataset:
    """The items an arm is allowed to see: one cluster, or the union."""
    if config.kind == "monolithic":
        return dataset
    items = [(clip, cond) for clip, cond in dataset.items if cond.cluster == config.cluster]
    if not items:
        raise ValueError(f"no items with cluster {config.cluster} in dataset")
    counts = np.zeros(dataset.config.n_clusters, dtype=np.int64)
    counts[config.cluster] = len(items)
    return Dataset(config=dataset.config, items=items, cluster_counts=counts, seed=dataset.seed)


def train_arm(
    config: TrainArmConfig,
    dataset: Dataset,
    init: NetParams,
    lr: float = 1e-3,
    batch_hook: Optional[Callable[[int, list[FlowBatchItem]], None]] = None,
    time_sampler: Optional[Callable[[np.random.Generator], float]] = None,
) -> tuple[NetParams, list[float]]:
    """Run config.steps optimizer updates; returns final params and per-step losses.

    batch_hook, when given, sees every (step, batch) consumed; tests use it to
    audit cluster confinement and item accounting.
    """
    visible = arm_dataset(config, dataset)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    net = init
    opt = init_opt_state(net, lr=lr)
    trace: list[float] = []
    for step in range(config.steps):
        batch = make_flow_batch(visible, config.batch_size, config.p_drop, rng, time_sampler)
        if batch_hook is not None:
            batch_hook(step, batch)
        loss, grads = loss_and_gradients(net, [(it.x_t, it.t, it.cond, it.target) for it in batch])
        if not np.isfinite(loss):
            raise TrainingDivergedError(step, loss)
        net, opt = adam_update(net, grads, opt)
        trace.append(loss)
    return net, trace


@dataclass(frozen=True)
class IsoFlopSplit:
    monolithic_steps: int
    expert_steps: int


def iso_flop_split(total_steps: int, n_experts: int) -> IsoFlopSplit:
    """Step budget giving the monolithic arm the whole budget and each expert an equal share."""
    if total_steps < 1 or n_experts < 1:
        raise ValueError("total_steps and n_experts must be >= 1")
    if total_steps % n_experts != 0:
        lo = (total_steps // n_experts) * n_experts
        raise ValueError(
            f"total_steps {total_steps} not divisible by {n_experts} experts; "
            f"round to {lo} or {lo + n_experts}"
        )
    return IsoFlopSplit(monolithic_steps=total_steps, expert_steps=total_steps // n_experts)
