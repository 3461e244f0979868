"""Synthetic trajectory clusters standing in for cached video latents.

Three procedural families with visibly different dynamics: linear drift,
planar rotation, and sinusoidal oscillation. Each sample pairs a clip with a
condition vector that encodes its cluster and generation parameters, plus a
pooled low-dimensional projection of that vector. Datasets are built
stratified and cached to disk so training never re-runs generation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diskio import CacheFormatError, read_blob_file, write_blob_file

DATASET_MAGIC = "DDMLAB-DS"

# Scale of the cluster one-hot inside the full condition vector.
ONE_HOT_GAIN = 2.0

# Per-sample parameter ranges; chosen so clip entries stay roughly in [-5, 5].
START_RANGE = (-1.0, 1.0)
DRIFT_RANGE = (-0.5, 0.5)
OMEGA_RANGE = (math.pi / 8, math.pi / 2)
AMP_RANGE = (0.5, 1.5)

N_CLUSTER_KINDS = 3


@dataclass(frozen=True)
class DataConfig:
    """Generation parameters for one dataset."""

    n_clusters: int = 3
    n_frames: int = 8
    dim: int = 4
    cond_dim: int = 16
    pooled_dim: int = 4
    sigma_c: float = 0.05

    def __post_init__(self):
        if not 1 <= self.n_clusters <= N_CLUSTER_KINDS:
            raise ValueError(f"n_clusters must be in [1, {N_CLUSTER_KINDS}], got {self.n_clusters}")
        if self.n_frames < 2:
            raise ValueError("n_frames must be >= 2")
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.pooled_dim < 1 or self.pooled_dim >= self.cond_dim:
            raise ValueError("pooled_dim must satisfy 1 <= pooled_dim < cond_dim")
        if self.cond_dim % self.pooled_dim != 0:
            raise ValueError(f"cond_dim {self.cond_dim} not divisible by pooled_dim {self.pooled_dim}")
        if self.sigma_c < 0:
            raise ValueError("sigma_c must be >= 0")
        needed = _param_offset(self.n_clusters, self.cond_dim, self.pooled_dim) + 2 * self.dim + 1
        if self.cond_dim < needed:
            raise ValueError(f"cond_dim {self.cond_dim} too small for layout (needs >= {needed})")

    @property
    def clip_size(self) -> int:
        return self.n_frames * self.dim


@dataclass(frozen=True, eq=False)
class Clip:
    """One frame sequence, shape (n_frames, dim)."""

    frames: np.ndarray

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[0] < 2 or self.frames.shape[1] < 1:
            raise ValueError(f"frames must be (F>=2, D>=1), got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("clip contains non-finite entries")

    def flat(self) -> np.ndarray:
        return self.frames.reshape(-1)


@dataclass(frozen=True, eq=False)
class Condition:
    """Full condition vector, its pooled projection, and the source cluster."""

    full: np.ndarray
    pooled: np.ndarray
    cluster: int


@dataclass
class Dataset:
    config: DataConfig
    items: list[tuple[Clip, Condition]]
    cluster_counts: np.ndarray
    seed: int

    def __len__(self) -> int:
        return len(self.items)

    def clips_flat(self) -> np.ndarray:
        return np.stack([clip.flat() for clip, _ in self.items])

    def conds_full(self) -> np.ndarray:
        return np.stack([cond.full for _, cond in self.items])

    def conds_pooled(self) -> np.ndarray:
        return np.stack([cond.pooled for _, cond in self.items])

    def labels(self) -> np.ndarray:
        return np.array([cond.cluster for _, cond in self.items], dtype=np.int64)


def param_length(cluster: int, dim: int) -> int:
    """Length of the per-sample parameter vector for one cluster kind."""
    if cluster == 0:
        return 2 * dim  # start, drift
    if cluster == 1:
        return dim + 1  # start, omega
    if cluster == 2:
        return 2 * dim + 1  # start, amp, omega
    raise ValueError(f"unknown cluster index {cluster}")


def generate_clip(cluster: int, params: np.ndarray, n_frames: int, dim: int) -> Clip:
    """Deterministic clip for one cluster kind and parameter vector.

    Cluster 0 drifts linearly, cluster 1 rotates the start vector in the
    first two dimensions, cluster 2 oscillates around the start.
    """
    if cluster not in (0, 1, 2):
        raise ValueError(f"unknown cluster index {cluster}")
    if n_frames < 2:
        raise ValueError("n_frames must be >= 2")
    if dim < 2:
        raise ValueError("dim must be >= 2")
    params = np.asarray(params, dtype=np.float64)
    if not np.all(np.isfinite(params)):
        raise ValueError("non-finite clip parameters")
    if params.shape != (param_length(cluster, dim),):
        raise ValueError(
            f"cluster {cluster} with dim {dim} needs {param_length(cluster, dim)} parameters, "
            f"got shape {params.shape}"
        )

    start = params[:dim]
    steps = np.arange(n_frames, dtype=np.float64)
    if cluster == 0:
        drift = params[dim:]
        frames = start[None, :] + steps[:, None] * drift[None, :]
    elif cluster == 1:
        omega = params[dim]
        angles = steps * omega
        frames = np.tile(start, (n_frames, 1))
        cos, sin = np.cos(angles), np.sin(angles)
        frames[:, 0] = cos * start[0] - sin * start[1]
        frames[:, 1] = sin * start[0] + cos * start[1]
    else:
        amp = params[dim : 2 * dim]
        omega = params[2 * dim]
        frames = start[None, :] + np.sin(steps * omega)[:, None] * amp[None, :]
    return Clip(frames)


def draw_params(cluster: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Sample one parameter vector from the cluster-specific ranges."""
    start = rng.uniform(*START_RANGE, size=dim)
    if cluster == 0:
        return np.concatenate([start, rng.uniform(*DRIFT_RANGE, size=dim)])
    if cluster == 1:
        return np.concatenate([start, [rng.uniform(*OMEGA_RANGE)]])
    if cluster == 2:
        return np.concatenate([start, rng.uniform(*AMP_RANGE, size=dim), [rng.uniform(*OMEGA_RANGE)]])
    raise ValueError(f"unknown cluster index {cluster}")


def _param_offset(n_clusters: int, cond_dim: int, pooled_dim: int) -> int:
    # Parameters start at a pooling-block boundary when possible so the
    # pooled projection keeps the cluster one-hot and the shape parameters
    # in separate blocks.
    return max(n_clusters, cond_dim // pooled_dim)


def condition_template(
    cluster: int, params: np.ndarray, n_clusters: int = 3, cond_dim: int = 16, pooled_dim: int = 4
) -> np.ndarray:
    """Noise-free full condition: gain-scaled one-hot, then params at fixed offsets."""
    params = np.asarray(params, dtype=np.float64)
    if cluster >= n_clusters:
        raise ValueError(f"cluster {cluster} out of range for n_clusters {n_clusters}")
    if cluster == 0:
        dim = len(params) // 2
    elif cluster == 1:
        dim = len(params) - 1
    else:
        dim = (len(params) - 1) // 2
    full = np.zeros(cond_dim)
    full[cluster] = ONE_HOT_GAIN
    o = _param_offset(n_clusters, cond_dim, pooled_dim)
    full[o : o + dim] = params[:dim]  # start
    if cluster == 0:
        full[o + dim : o + 2 * dim] = params[dim:]  # drift
    elif cluster == 1:
        full[o + 2 * dim] = params[dim]  # omega
    else:
        full[o + dim : o + 2 * dim] = params[dim : 2 * dim]  # amp
        full[o + 2 * dim] = params[2 * dim]  # omega
    return full


def pooled_from_full(full: np.ndarray, pooled_dim: int) -> np.ndarray:
    """Block-mean projection of the full condition vector."""
    full = np.asarray(full, dtype=np.float64)
    if full.shape[0] % pooled_dim != 0:
        raise ValueError(f"condition width {full.shape[0]} not divisible by pooled width {pooled_dim}")
    return full.reshape(pooled_dim, -1).mean(axis=1)


def make_condition(
    cluster: int,
    params: np.ndarray,
    sigma_c: float,
    rng: np.random.Generator,
    n_clusters: int = 3,
    cond_dim: int = 16,
    pooled_dim: int = 4,
) -> Condition:
    """Noisy full condition plus its pooled block-mean projection."""
    if sigma_c < 0:
        raise ValueError("sigma_c must be >= 0")
    full = condition_template(cluster, params, n_clusters, cond_dim, pooled_dim)
    full = full + sigma_c * rng.standard_normal(cond_dim)
    return Condition(full=full, pooled=pooled_from_full(full, pooled_dim), cluster=cluster)


def stratified_counts(n_total: int, n_clusters: int) -> list[int]:
    """Per-cluster counts for a stratified split; remainder round-robins from cluster 0."""
    if n_total < 1 or n_clusters < 1:
        raise ValueError("n_total and n_clusters must be >= 1")
    base, rem = divmod(n_total, n_clusters)
    return [base + (1 if k < rem else 0) for k in range(n_clusters)]


def _build(config: DataConfig, counts: list[int], seed: int) -> Dataset:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    items: list[tuple[Clip, Condition]] = []
    for cluster, count in enumerate(counts):
        for _ in range(count):
            params = draw_params(cluster, config.dim, rng)
            clip = generate_clip(cluster, params, config.n_frames, config.dim)
            cond = make_condition(
                cluster, params, config.sigma_c, rng,
                config.n_clusters, config.cond_dim, config.pooled_dim,
            )
            items.append((clip, cond))
    return Dataset(
        config=config,
        items=items,
        cluster_counts=np.array(counts, dtype=np.int64),
        seed=seed,
    )


def build_dataset(config: DataConfig, n_per_cluster: int, seed: int) -> Dataset:
    """Dataset with exactly n_per_cluster items in each cluster, deterministic in seed."""
    if n_per_cluster < 1:
        raise ValueError("n_per_cluster must be >= 1")
    return _build(config, [n_per_cluster] * config.n_clusters, seed)


def build_stratified_dataset(config: DataConfig, n_total: int, seed: int) -> Dataset:
    """Dataset of n_total items stratified across clusters by the round-robin rule."""
    return _build(config, stratified_counts(n_total, config.n_clusters), seed)


def build_cluster_dataset(config: DataConfig, cluster: int, n_items: int, seed: int) -> Dataset:
    """Dataset drawn from a single cluster; matches the stratified builder bit-for-bit
    when there is only one cluster."""
    if not 0 <= cluster < config.n_clusters:
        raise ValueError(f"cluster {cluster} out of range")
    if n_items < 1:
        raise ValueError("n_items must be >= 1")
    counts = [0] * config.n_clusters
    counts[cluster] = n_items
    return _build(config, counts, seed)


def save_dataset(dataset: Dataset, path) -> None:
    cfg = dataset.config
    fields = {
        "n_clusters": str(cfg.n_clusters),
        "n_frames": str(cfg.n_frames),
        "dim": str(cfg.dim),
        "cond_dim": str(cfg.cond_dim),
        "pooled_dim": str(cfg.pooled_dim),
        "sigma_c": repr(cfg.sigma_c),
        "seed": str(dataset.seed),
        "cluster_counts": ",".join(str(int(c)) for c in dataset.cluster_counts),
        "items": str(len(dataset.items)),
    }
    rows = np.empty((len(dataset.items), cfg.clip_size + cfg.cond_dim + cfg.pooled_dim + 1))
    for i, (clip, cond) in enumerate(dataset.items):
        rows[i] = np.concatenate([clip.flat(), cond.full, cond.pooled, [float(cond.cluster)]])
    write_blob_file(path, DATASET_MAGIC, fields, rows.astype("<f8").tobytes())


def load_dataset(path) -> Dataset:
    fields, blob = read_blob_file(path, DATASET_MAGIC)
    try:
        config = DataConfig(
            n_clusters=int(fields["n_clusters"]),
            n_frames=int(fields["n_frames"]),
            dim=int(fields["dim"]),
            cond_dim=int(fields["cond_dim"]),
            pooled_dim=int(fields["pooled_dim"]),
            sigma_c=float(fields["sigma_c"]),
        )
        seed = int(fields["seed"])
        counts = np.array([int(c) for c in fields["cluster_counts"].split(",")], dtype=np.int64)
        n_items = int(fields["items"])
    except (KeyError, ValueError) as exc:
        raise CacheFormatError(f"{path}: bad dataset header ({exc})") from exc
    row = config.clip_size + config.cond_dim + config.pooled_dim + 1
    expected = n_items * row * 8
    if len(blob) != expected:
        raise CacheFormatError(f"{path}: blob is {len(blob)} bytes, header implies {expected}")
    data = np.frombuffer(blob, dtype="<f8").reshape(n_items, row).copy()
    items: list[tuple[Clip, Condition]] = []
    for r in data:
        clip = Clip(r[: config.clip_size].reshape(config.n_frames, config.dim))
        full = r[config.clip_size : config.clip_size + config.cond_dim]
        pooled = r[config.clip_size + config.cond_dim : config.clip_size + config.cond_dim + config.pooled_dim]
        items.append((clip, Condition(full=full, pooled=pooled, cluster=int(r[-1]))))
    dataset = Dataset(config=config, items=items, cluster_counts=counts, seed=seed)
    if int(counts.sum()) != n_items:
        raise CacheFormatError(f"{path}: cluster_counts sum to {counts.sum()}, header says {n_items}")
    return dataset


def cache_roundtrip(dataset: Dataset, path) -> Dataset:
    """Write the dataset to path and read it back; the result is bit-identical."""
    save_dataset(dataset, path)
    return load_dataset(path)
