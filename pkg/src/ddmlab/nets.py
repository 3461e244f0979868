"""Small MLPs with hand-written reverse-mode gradients and Adam.

One architecture serves both roles: velocity fields (linear output over
F*D coordinates) and router logits (linear output over K clusters). Hidden
activations are tanh so finite-difference gradient checks stay clean.
Parameters and optimizer state are immutable values; every update returns
new ones, which is what lets training arms run with zero shared state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diskio import CacheFormatError, read_blob_file, write_blob_file

CHECKPOINT_MAGIC = "DDMLAB-CK"

# Width of the sinusoidal time embedding fed to every net.
TIME_FEATURE_WIDTH = 8

EXPERT_HIDDEN = (128, 128, 128)
ROUTER_HIDDEN = (32, 32)


@dataclass(frozen=True, eq=False)
class NetParams:
    """MLP parameters: weights[i] has shape (widths[i+1], widths[i])."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be non-empty and same length")
        prev_out = None
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer shapes {w.shape} / {b.shape} do not compose")
            if prev_out is not None and w.shape[1] != prev_out:
                raise ValueError(f"layer input {w.shape[1]} does not match previous output {prev_out}")
            prev_out = w.shape[0]
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite parameter entries")

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


@dataclass(frozen=True, eq=False)
class Grads:
    """Gradient record shaped like NetParams."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]


@dataclass(frozen=True, eq=False)
class OptState:
    """Adam accumulators plus hyperparameters; step counts completed updates."""

    m_weights: tuple[np.ndarray, ...]
    m_biases: tuple[np.ndarray, ...]
    v_weights: tuple[np.ndarray, ...]
    v_biases: tuple[np.ndarray, ...]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.eps <= 0 or not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("optimizer hyperparameters out of range")
        if self.step < 0:
            raise ValueError("step must be >= 0")


def default_expert_widths(clip_size: int, cond_dim: int) -> list[int]:
    return [clip_size + TIME_FEATURE_WIDTH + cond_dim, *EXPERT_HIDDEN, clip_size]


def default_router_widths(clip_size: int, pooled_dim: int, n_clusters: int) -> list[int]:
    return [clip_size + TIME_FEATURE_WIDTH + pooled_dim, *ROUTER_HIDDEN, n_clusters]


def init_params(widths: list[int], seed: int) -> NetParams:
    """Uniform weights scaled by 1/sqrt(fan_in), zero biases, deterministic in seed."""
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError(f"need >= 2 positive widths, got {widths}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return NetParams(weights=tuple(weights), biases=tuple(biases))


def init_opt_state(net: NetParams, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> OptState:
    zw = tuple(np.zeros_like(w) for w in net.weights)
    zb = tuple(np.zeros_like(b) for b in net.biases)
    return OptState(m_weights=zw, m_biases=zb,
                    v_weights=tuple(np.zeros_like(w) for w in net.weights),
                    v_biases=tuple(np.zeros_like(b) for b in net.biases),
                    step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def time_features(t: float, t_w: int = TIME_FEATURE_WIDTH) -> np.ndarray:
    """Interleaved [sin(2*pi*f_i*t), cos(2*pi*f_i*t)] over frequencies f_i = 2^i."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    if t_w < 2 or t_w % 2 != 0:
        raise ValueError(f"t_w must be a positive even integer, got {t_w}")
    freqs = 2.0 ** np.arange(t_w // 2)
    angles = 2.0 * math.pi * freqs * t
    out = np.empty(t_w)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def _forward(net: NetParams, x: np.ndarray) -> list[np.ndarray]:
    """Activations per layer for a (batch, in) matrix; final layer linear."""
    acts = [x]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w.T + b
        acts.append(z if i == last else np.tanh(z))
    return acts


def forward_mlp(net: NetParams, x: np.ndarray) -> np.ndarray:
    """Pure forward pass; x is one input vector or a (batch, in) matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out = _forward(net, x[None, :] if single else x)[-1]
    return out[0] if single else out


def assemble_input(x_t: np.ndarray, t: float, cond: np.ndarray, in_width: int) -> np.ndarray:
    """Concatenate [x_t, time features, cond]; time width inferred from the net."""
    x_t = np.asarray(x_t, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    t_w = in_width - x_t.shape[-1] - cond.shape[-1]
    if t_w < 2 or t_w % 2 != 0:
        raise ValueError(
            f"inputs of widths {x_t.shape[-1]} + {cond.shape[-1]} do not fit net input {in_width}"
        )
    return np.concatenate([x_t, time_features(t, t_w), cond])


def forward_velocity(net: NetParams, x_t: np.ndarray, t: float, cond: np.ndarray) -> np.ndarray:
    """Velocity prediction for one flattened noisy clip under one condition."""
    return forward_mlp(net, assemble_input(x_t, t, cond, net.widths[0]))


def _backprop(net: NetParams, acts: list[np.ndarray], grad_out: np.ndarray) -> Grads:
    """Reverse pass given dLoss/dOutput for a batched forward."""
    gw = [np.empty(0)] * len(net.weights)
    gb = [np.empty(0)] * len(net.biases)
    g = grad_out
    for i in range(len(net.weights) - 1, -1, -1):
        gw[i] = g.T @ acts[i]
        gb[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ net.weights[i]) * (1.0 - acts[i] ** 2)
    return Grads(weights=tuple(gw), biases=tuple(gb))


def loss_and_gradients(
    net: NetParams, batch: list[tuple[np.ndarray, float, np.ndarray, np.ndarray]]
) -> tuple[float, Grads]:
    """Mean squared velocity error over a batch of (x_t, t, cond, target).

    A non-finite loss is returned as-is so the training loop can abort with
    the step index; nothing is clipped here.
    """
    if not batch:
        raise ValueError("empty batch")
    inputs = np.stack([assemble_input(x_t, t, cond, net.widths[0]) for x_t, t, cond, _ in batch])
    targets = np.stack([np.asarray(tgt, dtype=np.float64) for _, _, _, tgt in batch])
    acts = _forward(net, inputs)
    pred = acts[-1]
    if pred.shape != targets.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match targets {targets.shape}")
    resid = pred - targets
    loss = float(np.mean(resid ** 2))
    grads = _backprop(net, acts, 2.0 * resid / resid.size)
    return loss, grads


def xent_loss_and_gradients(
    net: NetParams, inputs: np.ndarray, labels: np.ndarray
) -> tuple[float, Grads]:
    """Softmax cross-entropy over a (batch, in) matrix and integer labels."""
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels)
    if inputs.ndim != 2 or inputs.shape[0] == 0 or labels.shape != (inputs.shape[0],):
        raise ValueError("need a non-empty (batch, in) matrix and matching labels")
    acts = _forward(net, inputs)
    logits = acts[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    n = inputs.shape[0]
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    grad_out = probs.copy()
    grad_out[np.arange(n), labels] -= 1.0
    return loss, _backprop(net, acts, grad_out / n)


def adam_update(net: NetParams, grads: Grads, opt: OptState) -> tuple[NetParams, OptState]:
    """One bias-corrected adaptive-moment step; returns new values."""
    for gw, gb, w, b in zip(grads.weights, grads.biases, net.weights, net.biases):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ValueError("gradient shapes do not match parameters")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise ValueError("non-finite gradient entries")
    step = opt.step + 1
    c1 = 1.0 - opt.beta1 ** step
    c2 = 1.0 - opt.beta2 ** step

    def upd(p, g, m, v):
        m = opt.beta1 * m + (1.0 - opt.beta1) * g
        v = opt.beta2 * v + (1.0 - opt.beta2) * g ** 2
        p = p - opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
        return p, m, v

    new_w, new_mw, new_vw = [], [], []
    for p, g, m, v in zip(net.weights, grads.weights, opt.m_weights, opt.v_weights):
        p, m, v = upd(p, g, m, v)
        new_w.append(p); new_mw.append(m); new_vw.append(v)
    new_b, new_mb, new_vb = [], [], []
    for p, g, m, v in zip(net.biases, grads.biases, opt.m_biases, opt.v_biases):
        p, m, v = upd(p, g, m, v)
        new_b.append(p); new_mb.append(m); new_vb.append(v)
    return (
        NetParams(weights=tuple(new_w), biases=tuple(new_b)),
        OptState(m_weights=tuple(new_mw), m_biases=tuple(new_mb),
                 v_weights=tuple(new_vw), v_biases=tuple(new_vb),
                 step=step, lr=opt.lr, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps),
    )


def save_checkpoint(net: NetParams, opt: OptState, path) -> None:
    fields = {
        "widths": ",".join(str(w) for w in net.widths),
        "lr": repr(opt.lr),
        "beta1": repr(opt.beta1),
        "beta2": repr(opt.beta2),
        "eps": repr(opt.eps),
        "step": str(opt.step),
    }
    groups = [(net.weights, net.biases), (opt.m_weights, opt.m_biases), (opt.v_weights, opt.v_biases)]
    parts = []
    for ws, bs in groups:
        for w, b in zip(ws, bs):
            parts.append(w.ravel())
            parts.append(b)
    write_blob_file(path, CHECKPOINT_MAGIC, fields, np.concatenate(parts).astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[NetParams, OptState]:
    fields, blob = read_blob_file(path, CHECKPOINT_MAGIC)
    try:
        widths = [int(w) for w in fields["widths"].split(",")]
        hyper = {k: float(fields[k]) for k in ("lr", "beta1", "beta2", "eps")}
        step = int(fields["step"])
    except (KeyError, ValueError) as exc:
        raise CacheFormatError(f"{path}: bad checkpoint header ({exc})") from exc
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise CacheFormatError(f"{path}: bad widths {widths}")
    n = sum(o * i + o for i, o in zip(widths[:-1], widths[1:]))
    if len(blob) != 3 * n * 8:
        raise CacheFormatError(f"{path}: blob holds {len(blob) // 8} values, widths imply {3 * n}")
    data = np.frombuffer(blob, dtype="<f8")
    groups = []
    pos = 0
    for _ in range(3):
        ws, bs = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            ws.append(data[pos : pos + fan_out * fan_in].reshape(fan_out, fan_in).copy())
            pos += fan_out * fan_in
            bs.append(data[pos : pos + fan_out].copy())
            pos += fan_out
        groups.append((tuple(ws), tuple(bs)))
    net = NetParams(weights=groups[0][0], biases=groups[0][1])
    opt = OptState(m_weights=groups[1][0], m_biases=groups[1][1],
                   v_weights=groups[2][0], v_biases=groups[2][1], step=step, **hyper)
    return net, opt


def checkpoint_roundtrip(net: NetParams, opt: OptState, path) -> tuple[NetParams, OptState]:
    """Write then reload; the reload is bit-identical."""
    save_checkpoint(net, opt, path)
    return load_checkpoint(path)
