"""Evaluation suite: Frechet distance on flattened clips, a closed-form
linear alignment probe, motion magnitude, and the ablation statistics.

The feature map for the Frechet metric is the identity on flattened clips;
no learned encoder exists at this scale. An aesthetic score is deliberately
absent: reports carry an explicit "not computed" marker instead of a proxy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .datagen import Clip

COV_SYMMETRY_TOL = 1e-12
COV_EIG_FLOOR_TOL = -1e-9
AESTHETIC_MARKER = "not computed"


@dataclass(frozen=True, eq=False)
class GaussianSummary:
    """Sample mean and covariance of a feature set."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean dim {d}")
        if np.max(np.abs(self.cov - self.cov.T)) > COV_SYMMETRY_TOL:
            raise ValueError("covariance not symmetric")
        if np.linalg.eigvalsh(self.cov).min() < COV_EIG_FLOOR_TOL:
            raise ValueError("covariance has a significantly negative eigenvalue")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_gaussian(samples) -> GaussianSummary:
    """Sample mean and unbiased covariance, symmetrized."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 samples of equal dimension")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    return GaussianSummary(mean=mean, cov=(cov + cov.T) / 2.0, n=x.shape[0])


def sqrtm_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition; eigenvalues floored at 0."""
    sym = (m + m.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(p: GaussianSummary, q: GaussianSummary) -> float:
    """|mu_p - mu_q|^2 + tr(C_p + C_q - 2 (C_p^1/2 C_q C_p^1/2)^1/2), symmetric, >= 0."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch {p.dim} vs {q.dim}")
    root_p = sqrtm_psd(p.cov)
    cross = sqrtm_psd(root_p @ q.cov @ root_p)
    diff = p.mean - q.mean
    val = float(diff @ diff + np.trace(p.cov) + np.trace(q.cov) - 2.0 * np.trace(cross))
    return max(val, 0.0)


@dataclass(frozen=True, eq=False)
class AlignmentProbe:
    """Linear map from flattened clip to the pooled-condition space."""

    weight: np.ndarray
    bias: np.ndarray

    def project(self, flat_clip: np.ndarray) -> np.ndarray:
        return self.weight @ np.asarray(flat_clip, dtype=np.float64) + self.bias


def fit_alignment_probe(real_clips: list[Clip], pooled_conds, lam: float = 1e-3) -> AlignmentProbe:
    """Ridge regression clip -> pooled, solved in closed form.

    The objective is mean squared error plus lam * |W|^2, so duplicating the
    training set leaves the probe unchanged.
    """
    if lam <= 0:
        raise ValueError("lam must be > 0")
    x = np.stack([c.flat() for c in real_clips])
    y = np.asarray(pooled_conds, dtype=np.float64)
    n, d = x.shape
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} training pairs, got {n}")
    if y.shape[0] != n:
        raise ValueError("clip and condition counts differ")
    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    yc = y - y_mean
    sxx = xc.T @ xc / n + lam * np.eye(d)
    sxy = xc.T @ yc / n
    wt = scipy.linalg.solve(sxx, sxy, assume_a="pos")
    weight = wt.T
    return AlignmentProbe(weight=weight, bias=y_mean - weight @ x_mean)


def alignment_score(probe: AlignmentProbe, clip: Clip, pooled: np.ndarray) -> float:
    """Cosine between the probe's projection and the pooled condition; zero vectors score 0."""
    a = probe.project(clip.flat())
    b = np.asarray(pooled, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def motion_magnitude(clip: Clip) -> float:
    """Mean Euclidean displacement between consecutive frames."""
    if clip.frames.shape[0] < 2:
        raise ValueError("motion needs at least 2 frames")
    return float(np.mean(np.linalg.norm(np.diff(clip.frames, axis=0), axis=1)))


def mean_and_se(values) -> tuple[float, float]:
    """Sample mean and standard error (std/sqrt(n), ddof=1); SE is 0 for n=1."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty value list")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size))


def specialization_gap(in_scores, out_scores) -> tuple[float, float, float]:
    """(mean(in) - mean(out), mean(in), mean(out))."""
    if len(in_scores) == 0 or len(out_scores) == 0:
        raise ValueError("score lists must be non-empty")
    in_mean = float(np.mean(in_scores))
    out_mean = float(np.mean(out_scores))
    return in_mean - out_mean, in_mean, out_mean


def schedule_preference(per_prompt_scores: dict[str, list[float]], baseline: set[str]) -> int:
    """Prompts whose best-scoring schedule lies outside the baseline set.

    Ties go to the baseline, so the count is conservative.
    """
    names = list(per_prompt_scores)
    if not baseline or not set(baseline) <= set(names):
        raise ValueError("baseline must be a non-empty subset of the schedule names")
    lengths = {len(v) for v in per_prompt_scores.values()}
    if len(lengths) != 1:
        raise ValueError(f"per-prompt lists have unequal lengths {sorted(lengths)}")
    n_prompts = lengths.pop()
    count = 0
    for i in range(n_prompts):
        best = max(per_prompt_scores[name][i] for name in names)
        baseline_best = max(per_prompt_scores[name][i] for name in baseline)
        if baseline_best < best:
            count += 1
    return count


@dataclass
class MetricReport:
    """One arm's evaluation: distributional distance plus per-prompt scores."""

    frechet: float
    alignment_mean: float
    alignment_se: float
    motion_mean: float
    motion_se: float
    per_prompt: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.alignment_se < 0 or self.motion_se < 0:
            raise ValueError("standard errors must be nonnegative")

    def to_json_dict(self) -> dict:
        return {
            "frechet": self.frechet,
            "alignment_mean": self.alignment_mean,
            "alignment_se": self.alignment_se,
            "motion_mean": self.motion_mean,
            "motion_se": self.motion_se,
            "aesthetic": AESTHETIC_MARKER,
            "per_prompt": self.per_prompt,
        }


def compute_metric_report(
    clips: list[Clip],
    pooled_conds,
    clusters,
    reference: GaussianSummary,
    probe: AlignmentProbe,
) -> MetricReport:
    """Score one arm's sampled clips against a reference clip distribution."""
    if not (len(clips) == len(pooled_conds) == len(clusters)):
        raise ValueError("clips, conditions, and clusters must align")
    summary = fit_gaussian([c.flat() for c in clips])
    per_prompt = []
    for clip, pooled, cluster in zip(clips, pooled_conds, clusters):
        per_prompt.append({
            "cluster": int(cluster),
            "alignment": alignment_score(probe, clip, pooled),
            "motion": motion_magnitude(clip),
        })
    a_mean, a_se = mean_and_se([p["alignment"] for p in per_prompt])
    m_mean, m_se = mean_and_se([p["motion"] for p in per_prompt])
    return MetricReport(
        frechet=frechet_distance(summary, reference),
        alignment_mean=a_mean, alignment_se=a_se,
        motion_mean=m_mean, motion_se=m_se,
        per_prompt=per_prompt,
    )
