"""Experiment orchestration: config parsing, the comparison pipeline, reports,
and the CLI front end. The pipeline tests run a shrunken configuration."""

import json
from dataclasses import replace

import numpy as np
import pytest

from ddmlab.cli import main
from ddmlab.harness import (
    ComparisonReport,
    ExperimentConfig,
    StageError,
    canonical_config_text,
    derive_seed,
    emit_report,
    eval_prompt_set,
    load_config,
    load_report,
    relative_improvements,
    run_comparison,
    run_specialization_probe,
    run_switching_ablation,
    train_induced_pair,
)
from ddmlab.metrics import MetricReport

TINY = dict(
    n_train_per_cluster=12, n_eval=6, total_steps=30, batch_size=8,
    router_steps=40, n_steps=4, n_ablate=6,
)


def _tiny_config(out_dir, **overrides):
    kwargs = {**TINY, **overrides}
    return ExperimentConfig(out_dir=str(out_dir), **kwargs)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_run")
    config = _tiny_config(out)
    return config, run_comparison(config)


# -------------------------------------------------------------------- config


def test_load_config_minimal_file_gets_defaults(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(f"out_dir = {tmp_path / 'run'}\n")
    cfg = load_config(path)
    assert cfg.n_clusters == 3
    assert cfg.total_steps == 6000
    assert cfg.n_eval == 300
    assert cfg.top_k == 1
    assert cfg.cfg_scale == 7.5
    assert cfg.n_steps == 50


def test_load_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("out_dir = /tmp/x\nfoo = 1\n")
    with pytest.raises(ValueError, match="foo"):
        load_config(path)


def test_load_config_rejects_bad_values(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("out_dir = /tmp/x\nn_steps = -3\n")
    with pytest.raises(ValueError):
        load_config(path)
    path.write_text("out_dir = /tmp/x\ntotal_steps = soon\n")
    with pytest.raises(ValueError, match="total_steps"):
        load_config(path)
    path.write_text("out_dir = /tmp/x\nn_eval = 4\nn_eval = 5\n")
    with pytest.raises(ValueError, match="duplicate"):
        load_config(path)


def test_load_config_comments_overrides_and_seed(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# comment\n\nout_dir = /tmp/a\nn_eval = 12\n")
    cfg = load_config(path, out_dir=str(tmp_path / "b"), seed=9)
    assert cfg.out_dir.endswith("b")
    assert cfg.n_eval == 12
    assert (cfg.seed_data, cfg.seed_train, cfg.seed_eval) == (9, 9, 9)


def test_config_hash_ignores_out_dir(tmp_path):
    a = _tiny_config(tmp_path / "a")
    b = _tiny_config(tmp_path / "b")
    assert canonical_config_text(a) == canonical_config_text(b)
    c = _tiny_config(tmp_path / "a", n_eval=8)
    assert canonical_config_text(a) != canonical_config_text(c)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(out_dir="/tmp/x", p_drop=1.0)
    with pytest.raises(ValueError):
        ExperimentConfig(out_dir="/tmp/x", seed_eval=-1)
    with pytest.raises(ValueError):
        ExperimentConfig(out_dir="/tmp/x", top_k=0)
    with pytest.raises(ValueError):
        ExperimentConfig(out_dir="/tmp/x", lr=0.0)


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
    seen = {derive_seed(0, tag, k) for tag in range(5) for k in range(5)}
    assert len(seen) == 25


def test_eval_prompts_stratified_and_deterministic(tmp_path):
    config = _tiny_config(tmp_path, n_eval=7)
    a = eval_prompt_set(config)
    b = eval_prompt_set(config)
    counts = list(a.cluster_counts)
    assert sorted(counts) == [2, 2, 3]
    for (ca, _), (cb, _) in zip(a.items, b.items):
        assert ca.frames.tobytes() == cb.frames.tobytes()


# ------------------------------------------------------------------- reports


def _synthetic_report():
    def rep(fr, al):
        return MetricReport(frechet=fr, alignment_mean=al, alignment_se=0.01,
                            motion_mean=1.0, motion_se=0.05,
                            per_prompt=[{"cluster": 0, "alignment": al, "motion": 1.0}])
    arms = {"ddm": rep(279.01, 0.2178), "monolithic": rep(561.04, 0.2032)}
    return ComparisonReport(
        arms=arms,
        relative=relative_improvements(arms["ddm"], arms["monolithic"]),
        provenance={"config": "deadbeef"},
        config_text="n_clusters=3\n",
    )


def test_relative_improvement_matches_published_arithmetic():
    report = _synthetic_report()
    assert report.relative["frechet"] == pytest.approx((561.04 - 279.01) / 561.04, rel=1e-12)
    assert round(report.relative["frechet"], 4) == 0.5027
    assert report.relative["alignment"] == pytest.approx((0.2178 - 0.2032) / 0.2032, rel=1e-12)


def test_emit_report_files_and_motion_direction(tmp_path):
    report = _synthetic_report()
    paths = emit_report(report, tmp_path)
    assert [p.name for p in paths] == ["report.json", "per_prompt.csv", "relative.csv"]
    rel_lines = (tmp_path / "relative.csv").read_text().splitlines()
    assert rel_lines[0] == "metric,monolithic,ddm,relative_improvement,direction"
    assert rel_lines[1].startswith("frechet,561.04,279.01,") and rel_lines[1].endswith(",down")
    assert rel_lines[2].endswith(",up")
    assert rel_lines[3] == "motion,1.0,1.0,,none"
    pp = (tmp_path / "per_prompt.csv").read_text().splitlines()
    assert len(pp) == 1 + 2  # header + one prompt per arm


def test_emit_report_is_idempotent(tmp_path):
    report = _synthetic_report()
    emit_report(report, tmp_path)
    first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    emit_report(report, tmp_path)
    second = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    assert first == second


def test_report_json_roundtrip(tmp_path):
    report = _synthetic_report()
    emit_report(report, tmp_path)
    loaded = load_report(tmp_path / "report.json")
    assert loaded.to_json_dict() == report.to_json_dict()


# ------------------------------------------------------------------ pipeline


def test_comparison_writes_full_artifact_set(tiny_run):
    config, report = tiny_run
    from pathlib import Path

    out = Path(config.out_dir)
    expected = [
        "dataset.bin", "monolithic.ckpt", "router.ckpt", "report.json",
        "per_prompt.csv", "relative.csv", "router_accuracy.csv", "router_tbin.csv",
        "loss_monolithic.csv",
    ]
    expected += [f"expert_{k}.ckpt" for k in range(3)]
    expected += [f"loss_expert_{k}.csv" for k in range(3)]
    for name in expected:
        assert (out / name).exists(), name
    assert set(report.arms) == {"ddm", "monolithic", "expert_0", "expert_1", "expert_2"}
    for rep in report.arms.values():
        assert len(rep.per_prompt) == config.n_eval


def test_comparison_protocol_identical_across_arms(tiny_run):
    _, report = tiny_run
    protos = {v for k, v in report.provenance.items() if k.startswith("protocol_")}
    assert len(protos) == 1  # same prompts, noise seeds, and sampler knobs everywhere


def test_comparison_report_roundtrips_from_disk(tiny_run):
    config, report = tiny_run
    from pathlib import Path

    loaded = load_report(Path(config.out_dir) / "report.json")
    assert loaded.to_json_dict() == report.to_json_dict()


def test_comparison_loss_csvs_have_step_rows(tiny_run):
    config, _ = tiny_run
    from pathlib import Path

    mono = (Path(config.out_dir) / "loss_monolithic.csv").read_text().splitlines()
    assert mono[0] == "step,loss"
    assert len(mono) == 1 + config.total_steps
    exp = (Path(config.out_dir) / "loss_expert_0.csv").read_text().splitlines()
    assert len(exp) == 1 + config.total_steps // 3


def test_specialization_probe_deterministic(tiny_run):
    config, _ = tiny_run
    a = run_specialization_probe(config, 0)
    b = run_specialization_probe(config, 0)
    assert a.in_scores == b.in_scores
    assert a.out_scores == b.out_scores
    assert a.gap == pytest.approx(a.in_mean - a.out_mean, abs=1e-12)


def test_specialization_probe_needs_checkpoint(tmp_path):
    config = _tiny_config(tmp_path / "empty")
    with pytest.raises((FileNotFoundError, StageError)):
        run_specialization_probe(config, 0)


def test_switching_ablation_identical_experts_tie(tiny_run):
    config, _ = tiny_run
    from pathlib import Path

    ckpt = Path(config.out_dir) / "expert_0.ckpt"
    result = run_switching_ablation(config, pair=(ckpt, ckpt))
    reports = list(result.schedules.values())
    assert set(result.schedules) == {"single_a", "single_b", "alt_ab", "alt_ba"}
    for rep in reports[1:]:
        assert rep.frechet == reports[0].frechet
        assert rep.alignment_mean == reports[0].alignment_mean
    assert result.preference_count == 0  # ties never count as strict wins
    assert result.n_prompts == config.n_ablate


def test_degenerate_single_cluster_arms_identical(tmp_path):
    config = _tiny_config(tmp_path / "k1", n_clusters=1, total_steps=20, n_eval=4,
                          router_steps=10, n_train_per_cluster=40)
    report = run_comparison(config)
    ddm, mono = report.arms["ddm"], report.arms["monolithic"]
    assert ddm.frechet == mono.frechet
    assert ddm.alignment_mean == mono.alignment_mean
    assert ddm.per_prompt == mono.per_prompt
    assert report.provenance["protocol_ddm"] == report.provenance["protocol_monolithic"]
    gap = run_specialization_probe(config, 0)
    assert gap.gap == 0.0  # in-cluster set and generic set coincide at K=1


def test_rerun_bit_identical_provenance(tmp_path):
    cfg_a = _tiny_config(tmp_path / "a", total_steps=15,
                         n_eval=3, router_steps=10, n_steps=3)
    cfg_b = replace(cfg_a, out_dir=str(tmp_path / "b"))
    rep_a = run_comparison(cfg_a)
    rep_b = run_comparison(cfg_b)
    assert rep_a.provenance == rep_b.provenance
    assert rep_a.to_json_dict() == rep_b.to_json_dict()


def test_induced_pair_trains_both_checkpoints(tmp_path):
    config = _tiny_config(tmp_path / "ind", total_steps=16)
    train_induced_pair(config)
    from pathlib import Path

    out = Path(config.out_dir)
    assert (out / "induced_hi.ckpt").exists()
    assert (out / "induced_lo.ckpt").exists()
    result = run_switching_ablation(config)
    assert result.n_prompts == config.n_ablate


# ----------------------------------------------------------------------- cli


def _write_cfg(path, out_dir, **overrides):
    fields = {**TINY, **overrides, "out_dir": out_dir}
    path.write_text("".join(f"{k} = {v}\n" for k, v in fields.items()))
    return path


def test_cli_gen_data_and_exit_codes(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "exp.cfg", tmp_path / "run")
    assert main(["--config", str(cfg), "gen-data"]) == 0
    assert (tmp_path / "run" / "dataset.bin").exists()
    out = capsys.readouterr().out
    assert "36 items" in out

    bad = tmp_path / "bad.cfg"
    bad.write_text("out_dir = /tmp/x\nfoo = 1\n")
    assert main(["--config", str(bad), "gen-data"]) == 1


def test_cli_report_requires_compare_first(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "exp.cfg", tmp_path / "run")
    assert main(["--config", str(cfg), "report"]) == 2
    assert "stage report" in capsys.readouterr().err


def test_cli_needs_config_or_out(capsys):
    assert main(["gen-data"]) == 1


def test_cli_train_and_sample_flow(tiny_run, capsys):
    config, _ = tiny_run
    rc = main(["--out", config.out_dir, "sample", "--mode", "monolithic",
               "--steps", "4", "--n", "2"])
    assert rc == 0
    from pathlib import Path

    out_path = Path(config.out_dir) / "samples_monolithic_p0.bin"
    assert out_path.exists()
    from ddmlab.sampler import load_clips

    clips, _, fields = load_clips(out_path)
    assert len(clips) == 2
    assert fields["mode"] == "monolithic"

    rc = main(["--out", config.out_dir, "sample", "--mode", "schedule",
               "--schedule", "0,1,2,0", "--steps", "4", "--n", "1"])
    assert rc == 0


def test_cli_sample_missing_checkpoints_is_stage_error(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "exp.cfg", tmp_path / "run")
    main(["--config", str(cfg), "gen-data"])
    rc = main(["--config", str(cfg), "sample", "--mode", "monolithic"])
    assert rc == 2
    assert "stage sample" in capsys.readouterr().err


def test_cli_compare_then_report(tmp_path, capsys):
    cfg = _write_cfg(tmp_path / "exp.cfg", tmp_path / "run",
                     total_steps=15, n_eval=3,
                     router_steps=10, n_steps=3)
    assert main(["--config", str(cfg), "compare"]) == 0
    compare_out = capsys.readouterr().out
    assert "frechet:" in compare_out and "relative" in compare_out
    assert main(["--config", str(cfg), "report"]) == 0
    report_out = capsys.readouterr().out
    assert "ddm:" in report_out and "monolithic:" in report_out
