"""Command-line front end over the experiment harness.

Global flags: --config PATH (key=value file), --out DIR, --seed N. --out
overrides the config's out_dir; --seed overrides all three seeds at once.
Exit codes: 0 success, 2 for a named stage failure, 1 for other errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .diskio import CacheError
from .flowmatch import iso_flop_split
from .harness import (
    ExperimentConfig,
    StageError,
    TAG_NOISE,
    _write_csv,
    _write_loss_trace,
    derive_seed,
    emit_report,
    ensure_dataset,
    eval_prompt_set,
    load_config,
    load_report,
    run_comparison,
    run_specialization_probe,
    run_switching_ablation,
    train_expert_arm,
    train_induced_pair,
    train_monolithic_arm,
    train_router_arm,
    INDUCED_HI_CKPT,
    INDUCED_LO_CKPT,
)
from .nets import init_opt_state, load_checkpoint, save_checkpoint
from .router import accuracy_by_t_bin
from .sampler import SamplerConfig, sample, save_clips

import json


def _resolve_config(args) -> ExperimentConfig:
    if args.config is not None:
        return load_config(args.config, out_dir=args.out, seed=args.seed)
    if args.out is None:
        raise ValueError("need --config or --out to locate the experiment")
    kwargs = {"out_dir": args.out}
    if args.seed is not None:
        kwargs.update(seed_data=args.seed, seed_train=args.seed, seed_eval=args.seed)
    return ExperimentConfig(**kwargs)


def _cmd_gen_data(config: ExperimentConfig, args) -> int:
    ds = ensure_dataset(config)
    print(f"dataset: {len(ds)} items, counts {list(ds.cluster_counts)} -> "
          f"{Path(config.out_dir) / 'dataset.bin'}")
    return 0


def _cmd_train_expert(config: ExperimentConfig, args) -> int:
    ds = ensure_dataset(config)
    out = Path(config.out_dir)
    net, trace = train_expert_arm(config, ds, args.cluster)
    save_checkpoint(net, init_opt_state(net, lr=config.lr), out / f"expert_{args.cluster}.ckpt")
    _write_loss_trace(out / f"loss_expert_{args.cluster}.csv", trace)
    steps = iso_flop_split(config.total_steps, config.n_clusters).expert_steps
    print(f"expert {args.cluster}: {steps} steps, final loss {trace[-1]:.4f} -> "
          f"{out / f'expert_{args.cluster}.ckpt'}")
    return 0


def _cmd_train_monolithic(config: ExperimentConfig, args) -> int:
    ds = ensure_dataset(config)
    out = Path(config.out_dir)
    net, trace = train_monolithic_arm(config, ds)
    save_checkpoint(net, init_opt_state(net, lr=config.lr), out / "monolithic.ckpt")
    _write_loss_trace(out / "loss_monolithic.csv", trace)
    print(f"monolithic: {config.total_steps} steps, final loss {trace[-1]:.4f} -> "
          f"{out / 'monolithic.ckpt'}")
    return 0


def _cmd_train_router(config: ExperimentConfig, args) -> int:
    ds = ensure_dataset(config)
    out = Path(config.out_dir)
    net, trace = train_router_arm(config, ds)
    save_checkpoint(net, init_opt_state(net, lr=config.lr), out / "router.ckpt")
    _write_csv(out / "router_accuracy.csv", "step,accuracy", [f"{s},{a!r}" for s, a in trace])
    rng = np.random.default_rng(np.random.SeedSequence([config.seed_eval, TAG_NOISE]))
    tbin = accuracy_by_t_bin(net, eval_prompt_set(config), 10, rng)
    _write_csv(out / "router_tbin.csv", "t_bin,accuracy", [f"{e!r},{a!r}" for e, a in tbin])
    print(f"router: held-out accuracy {trace[-1][1]:.3f} -> {out / 'router.ckpt'}")
    return 0


def _load_sampling_nets(config: ExperimentConfig, mode: str, expert: int | None):
    out = Path(config.out_dir)
    if mode == "monolithic":
        path = out / "monolithic.ckpt"
        if not path.exists():
            raise StageError("sample", FileNotFoundError(f"missing checkpoint {path}"))
        return [load_checkpoint(path)[0]], None, "single", 0
    expert_paths = [out / f"expert_{k}.ckpt" for k in range(config.n_clusters)]
    missing = [str(p) for p in expert_paths if not p.exists()]
    if missing:
        raise StageError("sample", FileNotFoundError(f"missing checkpoints: {missing}"))
    experts = [load_checkpoint(p)[0] for p in expert_paths]
    router_net = None
    if mode == "routed":
        rpath = out / "router.ckpt"
        if not rpath.exists():
            raise StageError("sample", FileNotFoundError(f"missing checkpoint {rpath}"))
        router_net = load_checkpoint(rpath)[0]
    return experts, router_net, mode, expert


def _cmd_sample(config: ExperimentConfig, args) -> int:
    experts, router_net, mode, expert = _load_sampling_nets(config, args.mode, args.expert)
    schedule = None
    if args.schedule is not None:
        schedule = tuple(int(s) for s in args.schedule.split(","))
    scfg = SamplerConfig(
        n_steps=args.steps, cfg_scale=args.cfg, top_k=args.topk, mode=mode,
        expert=expert, schedule=schedule,
    )
    prompts = eval_prompt_set(config)
    if not 0 <= args.prompt_index < len(prompts):
        raise ValueError(f"prompt index {args.prompt_index} out of range [0, {len(prompts)})")
    _, cond = prompts.items[args.prompt_index]
    dcfg = config.data_config()
    clips = []
    for i in range(args.n):
        rng = np.random.default_rng(
            np.random.SeedSequence([config.seed_eval, TAG_NOISE, args.prompt_index, i]))
        clips.append(sample(experts, router_net, cond, scfg, rng, (dcfg.n_frames, dcfg.dim)))
    out_path = Path(config.out_dir) / f"samples_{args.mode}_p{args.prompt_index}.bin"
    save_clips(out_path, clips, cond, extra={
        "mode": args.mode, "steps": str(args.steps), "cfg": repr(args.cfg),
        "topk": str(args.topk), "prompt_index": str(args.prompt_index),
    })
    print(f"wrote {len(clips)} clips for prompt {args.prompt_index} "
          f"(cluster {cond.cluster}) -> {out_path}")
    return 0


def _cmd_compare(config: ExperimentConfig, args) -> int:
    report = run_comparison(config)
    ddm, mono = report.arms["ddm"], report.arms["monolithic"]
    print(f"frechet:   ddm {ddm.frechet:.4f}  monolithic {mono.frechet:.4f}  "
          f"relative {report.relative['frechet']:+.4f}")
    print(f"alignment: ddm {ddm.alignment_mean:.4f}  monolithic {mono.alignment_mean:.4f}  "
          f"relative {report.relative['alignment']:+.4f}")
    print(f"motion:    ddm {ddm.motion_mean:.4f}  monolithic {mono.motion_mean:.4f}  (no direction)")
    print(f"report -> {Path(config.out_dir) / 'report.json'}")
    return 0


def _cmd_ablate_switching(config: ExperimentConfig, args) -> int:
    out = Path(config.out_dir)
    if not (out / INDUCED_HI_CKPT).exists() or not (out / INDUCED_LO_CKPT).exists():
        train_induced_pair(config)
    result = run_switching_ablation(config)
    path = out / "ablation.json"
    path.write_text(json.dumps(result.to_json_dict(), sort_keys=True, indent=2) + "\n")
    for name, rep in result.schedules.items():
        print(f"{name}: alignment {rep.alignment_mean:.4f} +- {rep.alignment_se:.4f}, "
              f"frechet {rep.frechet:.4f}")
    print(f"preference: {result.preference_count} of {result.n_prompts} prompts "
          f"prefer a switching schedule -> {path}")
    return 0


def _cmd_probe_specialization(config: ExperimentConfig, args) -> int:
    out = Path(config.out_dir)
    clusters = [args.cluster] if args.cluster is not None else list(range(config.n_clusters))
    results = [run_specialization_probe(config, k) for k in clusters]
    path = out / "specialization.json"
    path.write_text(json.dumps([r.to_json_dict() for r in results], sort_keys=True, indent=2) + "\n")
    for r in results:
        print(f"expert {r.expert}: in {r.in_mean:.4f}  generic {r.out_mean:.4f}  "
              f"gap {r.gap:+.4f} (se {r.gap_se:.4f})")
    print(f"-> {path}")
    return 0


def _cmd_report(config: ExperimentConfig, args) -> int:
    path = Path(config.out_dir) / "report.json"
    if not path.exists():
        raise StageError("report", FileNotFoundError(f"missing {path}; run compare first"))
    report = load_report(path)
    emit_report(report, config.out_dir)
    for name in sorted(report.arms):
        rep = report.arms[name]
        print(f"{name}: frechet {rep.frechet:.4f}, alignment {rep.alignment_mean:.4f} "
              f"+- {rep.alignment_se:.4f}, motion {rep.motion_mean:.4f}")
    for metric, value in sorted(report.relative.items()):
        print(f"relative {metric}: {value:+.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddmlab",
        description="Decentralized diffusion ensemble experiments on synthetic trajectories.",
    )
    parser.add_argument("--config", help="key=value experiment config file")
    parser.add_argument("--out", help="output directory (overrides config out_dir)")
    parser.add_argument("--seed", type=int, help="override all three seeds at once")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="build and cache the training dataset")
    p = sub.add_parser("train-expert", help="train one per-cluster expert")
    p.add_argument("--cluster", type=int, required=True)
    sub.add_parser("train-monolithic", help="train the union baseline")
    sub.add_parser("train-router", help="train the cluster router")

    p = sub.add_parser("sample", help="sample clips for one eval prompt")
    p.add_argument("--mode", choices=["routed", "single", "schedule", "monolithic"],
                   default="routed")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--cfg", type=float, default=7.5)
    p.add_argument("--topk", type=int, default=1)
    p.add_argument("--schedule", help="comma-separated expert index per step")
    p.add_argument("--expert", type=int, help="expert index for single mode")
    p.add_argument("--prompt-index", type=int, default=0)
    p.add_argument("--n", type=int, default=4, help="clips to draw")

    sub.add_parser("compare", help="full routed-vs-monolithic comparison")
    sub.add_parser("ablate-switching", help="forced-schedule ablation over the induced pair")
    p = sub.add_parser("probe-specialization", help="in-cluster vs generic alignment gap")
    p.add_argument("--cluster", type=int, help="probe one expert (default: all)")
    sub.add_parser("report", help="re-emit report files from a saved report.json")

    return parser


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train-expert": _cmd_train_expert,
    "train-monolithic": _cmd_train_monolithic,
    "train-router": _cmd_train_router,
    "sample": _cmd_sample,
    "compare": _cmd_compare,
    "ablate-switching": _cmd_ablate_switching,
    "probe-specialization": _cmd_probe_specialization,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
        return _HANDLERS[args.command](config, args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, CacheError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
