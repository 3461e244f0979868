"""Routed Euler ODE sampling with classifier-free guidance.

Integration runs t from 1 (noise) to 0 (data) in n_steps equal steps. At
each step the expert weights come from the router, a forced single expert,
or a manual per-step schedule; guidance is applied per expert before
mixing, so one-hot weights reduce exactly to single-expert CFG sampling.
Only active experts are evaluated: 2 * n_steps * top_k forward passes per
sample, the factor 2 from the guidance pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .datagen import Clip, Condition
from .diskio import CacheFormatError, read_blob_file, write_blob_file
from .nets import NetParams, forward_velocity
from .router import RoutingWeights, route_weights, router_logits

CLIPS_MAGIC = "DDMLAB-CL"

SAMPLER_MODES = ("routed", "single", "schedule")


class SamplingDivergedError(RuntimeError):
    """Raised when integration produces a non-finite state."""

    def __init__(self, step: int):
        super().__init__(f"non-finite state at integration step {step}")
        self.step = step


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 50
    cfg_scale: float = 7.5
    top_k: int = 1
    seed: int = 0
    mode: str = "routed"
    expert: Optional[int] = None
    schedule: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be >= 0")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.mode not in SAMPLER_MODES:
            raise ValueError(f"mode must be one of {SAMPLER_MODES}, got {self.mode!r}")
        if self.mode == "single" and self.expert is None:
            raise ValueError("single mode needs an expert index")
        if self.mode == "schedule":
            if self.schedule is None:
                raise ValueError("schedule mode needs a schedule")
            if len(self.schedule) != self.n_steps:
                raise ValueError(f"schedule length {len(self.schedule)} != n_steps {self.n_steps}")


def guided_velocity(v_cond: np.ndarray, v_uncond: np.ndarray, s: float) -> np.ndarray:
    """Classifier-free combination v_uncond + s * (v_cond - v_uncond)."""
    v_cond = np.asarray(v_cond, dtype=np.float64)
    v_uncond = np.asarray(v_uncond, dtype=np.float64)
    if v_cond.shape != v_uncond.shape:
        raise ValueError(f"shape mismatch {v_cond.shape} vs {v_uncond.shape}")
    return v_uncond + s * (v_cond - v_uncond)


def mixture_velocity(
    experts: list[NetParams],
    weights: RoutingWeights,
    x_t: np.ndarray,
    t: float,
    cond_full: np.ndarray,
    s: float,
    call_log: Optional[list[int]] = None,
) -> np.ndarray:
    """Weighted sum of per-expert guided velocities over the active set only.

    call_log, when given, records one expert index per forward pass; tests
    use it to assert the sparse-compute contract.
    """
    if weights.weights.shape[0] != len(experts):
        raise ValueError(f"{weights.weights.shape[0]} weights for {len(experts)} experts")
    null_cond = np.zeros_like(np.asarray(cond_full, dtype=np.float64))
    out = None
    for k in weights.active_set:
        v_c = forward_velocity(experts[k], x_t, t, cond_full)
        v_u = forward_velocity(experts[k], x_t, t, null_cond)
        if call_log is not None:
            call_log.extend([k, k])
        term = weights.weights[k] * guided_velocity(v_c, v_u, s)
        out = term if out is None else out + term
    return out


def euler_integrate(
    velocity_fn: Callable[[np.ndarray, float], np.ndarray],
    x_start: np.ndarray,
    n_steps: int,
) -> list[np.ndarray]:
    """Fixed-step Euler from t=1 to t=0; returns all n_steps+1 states."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.asarray(x_start, dtype=np.float64)
    dt = -1.0 / n_steps
    states = [x]
    for i in range(n_steps):
        t_i = 1.0 - i / n_steps
        x = x + dt * velocity_fn(x, t_i)
        if not np.all(np.isfinite(x)):
            raise SamplingDivergedError(i)
        states.append(x)
    return states


def _one_hot_weights(k: int, n_experts: int) -> RoutingWeights:
    if not 0 <= k < n_experts:
        raise ValueError(f"expert index {k} out of range for {n_experts} experts")
    w = np.zeros(n_experts)
    w[k] = 1.0
    return RoutingWeights(weights=w, active_set=(k,), top_k=1)


def sample(
    experts: list[NetParams],
    router_net: Optional[NetParams],
    condition: Condition,
    config: SamplerConfig,
    rng: np.random.Generator,
    frame_shape: tuple[int, int],
    call_log: Optional[list[int]] = None,
) -> Clip:
    """Draw Gaussian noise and integrate the routed mixture field down to t=0."""
    if not experts:
        raise ValueError("need at least one expert")
    if config.mode == "routed" and router_net is None:
        raise ValueError("routed mode needs a router net")
    if config.mode == "schedule":
        bad = [k for k in config.schedule if not 0 <= k < len(experts)]
        if bad:
            raise ValueError(f"schedule indexes missing experts: {bad}")
    n_frames, dim = frame_shape
    x_start = rng.standard_normal(n_frames * dim)

    def velocity(x: np.ndarray, t: float) -> np.ndarray:
        step = int(round((1.0 - t) * config.n_steps))
        if config.mode == "routed":
            logits = router_logits(router_net, x, t, condition.pooled)
            weights = route_weights(logits, min(config.top_k, len(experts)))
        elif config.mode == "single":
            weights = _one_hot_weights(config.expert, len(experts))
        else:
            weights = _one_hot_weights(config.schedule[step], len(experts))
        return mixture_velocity(experts, weights, x, t, condition.full,
                                config.cfg_scale, call_log)

    final = euler_integrate(velocity, x_start, config.n_steps)[-1]
    return Clip(final.reshape(n_frames, dim))


def alternating_schedule(n_steps: int, pair: tuple[int, int], start: int) -> tuple[int, ...]:
    """[start, other, start, ...] over the two experts in pair."""
    a, b = pair
    if a == b:
        raise ValueError("pair must name two distinct experts")
    if start not in (a, b):
        raise ValueError(f"start {start} not in pair {pair}")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    other = b if start == a else a
    return tuple(start if i % 2 == 0 else other for i in range(n_steps))


def save_clips(path, clips: list[Clip], condition: Condition, extra: Optional[dict] = None) -> None:
    """Write sampled clips with the generating condition echoed in the header."""
    if not clips:
        raise ValueError("no clips to save")
    n_frames, dim = clips[0].frames.shape
    fields = {
        "n_clips": str(len(clips)),
        "n_frames": str(n_frames),
        "dim": str(dim),
        "cluster": str(condition.cluster),
        "cond_full": ",".join(repr(float(v)) for v in condition.full),
        "cond_pooled": ",".join(repr(float(v)) for v in condition.pooled),
    }
    fields.update(extra or {})
    rows = np.stack([c.flat() for c in clips])
    write_blob_file(path, CLIPS_MAGIC, fields, rows.astype("<f8").tobytes())


def load_clips(path) -> tuple[list[Clip], Condition, dict[str, str]]:
    fields, blob = read_blob_file(path, CLIPS_MAGIC)
    try:
        n_clips = int(fields["n_clips"])
        n_frames = int(fields["n_frames"])
        dim = int(fields["dim"])
        cond = Condition(
            full=np.array([float(v) for v in fields["cond_full"].split(",")]),
            pooled=np.array([float(v) for v in fields["cond_pooled"].split(",")]),
            cluster=int(fields["cluster"]),
        )
    except (KeyError, ValueError) as exc:
        raise CacheFormatError(f"{path}: bad clips header ({exc})") from exc
    expected = n_clips * n_frames * dim * 8
    if len(blob) != expected:
        raise CacheFormatError(f"{path}: blob is {len(blob)} bytes, header implies {expected}")
    data = np.frombuffer(blob, dtype="<f8").reshape(n_clips, n_frames, dim)
    return [Clip(data[i].copy()) for i in range(n_clips)], cond, fields
