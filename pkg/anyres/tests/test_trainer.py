import csv

import pytest
import torch


def _rows(path):
    with path.open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def _real_batch(config):
    return torch.rand(config.batch_size, 3, config.p, config.p)


def test_pretrain_step_updates_latent_branch_only(train_config, manifest):
    from trainer import init_state, pretrain_step

    state = init_state(train_config, manifest)
    before = {k: v.clone() for k, v in state.generator.state_dict().items()}
    pretrain_step(state, _real_batch(train_config))
    after = state.generator.state_dict()

    assert state.step == 1
    assert state.last.r1 is not None
    assert not torch.equal(before["input_proj.weight"], after["input_proj.weight"])
    for key in before:
        if key.startswith(("affine_s", "scale_mapping")):
            assert torch.equal(before[key], after[key]), key


def test_lazy_r1_runs_on_interval(train_config, manifest):
    from trainer import init_state, pretrain_step

    state = init_state(train_config, manifest)
    seen = []
    for _ in range(4):
        pretrain_step(state, _real_batch(train_config))
        seen.append(state.last.r1 is not None)

    assert seen == [True, False, True, False]


def test_patch_phase_starts_from_teacher(train_config, manifest):
    from models import PatchSpec
    from trainer import init_state, pretrain_step, start_patch_phase

    state = init_state(train_config, manifest)
    pretrain_step(state, _real_batch(train_config))
    patch_state = start_patch_phase(
        train_config, manifest, state.generator, state.discriminator
    )
    z = torch.randn(3, train_config.z_dim)
    specs = [PatchSpec.global_view(train_config.p)] * 3

    with torch.no_grad():
        student = patch_state.generator(z, specs)
        assert torch.equal(student, patch_state.teacher(z, specs))
    assert all(p.requires_grad for p in patch_state.generator.scale_parameters())
    assert not any(p.requires_grad for p in patch_state.teacher.parameters())


def test_patch_train_step_keeps_teacher_frozen(train_config, manifest):
    from datapipe import RealPatchDataset, collate_items
    from trainer import (
        init_state,
        parameter_fingerprint,
        patch_train_step,
        start_patch_phase,
    )

    state = init_state(train_config, manifest)
    state = start_patch_phase(
        train_config, manifest, state.generator, state.discriminator
    )
    fingerprint = parameter_fingerprint(state.teacher)
    scale_before = state.generator.affine_s[0].weight.clone()
    dataset = RealPatchDataset(manifest, state.policy, seed=0, length=4)
    for step in range(2):
        batch = collate_items([dataset[2 * step], dataset[2 * step + 1]])
        patch_train_step(state, batch)

    assert state.step == 2
    assert state.last.teacher is not None
    assert parameter_fingerprint(state.teacher) == fingerprint
    assert not torch.equal(state.generator.affine_s[0].weight, scale_before)


def test_patch_step_synthesizes_fakes_at_the_batch_specs(
    train_config, manifest, monkeypatch
):
    from datapipe import RealPatchDataset, collate_items
    from trainer import init_state, patch_train_step, start_patch_phase

    state = init_state(train_config, manifest)
    state = start_patch_phase(
        train_config, manifest, state.generator, state.discriminator
    )
    dataset = RealPatchDataset(manifest, state.policy, seed=5, length=4)
    batch = collate_items([dataset[1], dataset[3]])
    seen = []
    forward = state.generator.forward

    def recording_forward(z, specs):
        seen.append(list(specs))
        return forward(z, specs)

    monkeypatch.setattr(state.generator, "forward", recording_forward)
    patch_train_step(state, batch)

    assert seen == [batch.specs, batch.specs]


def test_step_functions_check_the_phase(train_config, manifest):
    from datapipe import RealPatchDataset, collate_items
    from errors import InvalidArgumentError
    from trainer import init_state, patch_train_step

    state = init_state(train_config, manifest)
    dataset = RealPatchDataset(manifest, state.policy, seed=0, length=2)
    with pytest.raises(InvalidArgumentError):
        patch_train_step(state, collate_items([dataset[0], dataset[1]]))


def test_non_finite_loss_aborts(train_config, manifest):
    from errors import NumericalAbortError
    from trainer import init_state, pretrain_step

    state = init_state(train_config, manifest)
    real = torch.full((train_config.batch_size, 3, 16, 16), float("nan"))

    with pytest.raises(NumericalAbortError) as info:
        pretrain_step(state, real)
    assert info.value.step == 0
    assert info.value.term in ("r1", "loss_D")


def test_init_state_rejects_mismatched_manifest(train_config, manifest):
    from errors import InvalidArgumentError
    from trainer import init_state

    with pytest.raises(InvalidArgumentError):
        init_state(train_config.model_copy(update={"p": 32}), manifest)


def test_two_phase_run_writes_artifacts(train_config, manifest, tmp_path):
    from checkpoint import load_checkpoint
    from trainer import BEST, LATEST, METRICS_FILE, run_phase

    first = run_phase(train_config, manifest, 1, tmp_path / "p1")
    assert [path.name for path in first] == ["step-000002.ckpt", "step-000003.ckpt"]
    assert (tmp_path / "p1" / BEST).exists()
    assert (tmp_path / "p1" / "samples-000003.png").exists()
    rows = _rows(tmp_path / "p1" / METRICS_FILE)
    assert [int(row["step"]) for row in rows] == [0, 1, 2, 3]
    assert list(rows[0]) == ["step", "loss_D", "loss_G", "r1", "teacher", "proxy_pfid"]
    assert rows[0]["proxy_pfid"] != "" and rows[3]["proxy_pfid"] != ""

    second = run_phase(
        train_config,
        manifest,
        2,
        tmp_path / "p2",
        init_checkpoint=tmp_path / "p1" / LATEST,
    )
    loaded = load_checkpoint(second[-1])
    teacher_src = load_checkpoint(tmp_path / "p1" / LATEST).generator

    assert loaded.meta.phase == 2
    assert loaded.meta.step == 3
    for key, value in teacher_src.state_dict().items():
        assert torch.equal(loaded.teacher.state_dict()[key], value)
    rows = _rows(tmp_path / "p2" / METRICS_FILE)
    assert all(row["teacher"] != "" for row in rows[1:])


def test_patch_phase_requires_phase_one_checkpoint(train_config, manifest, tmp_path):
    from errors import CheckpointError, InvalidArgumentError
    from trainer import LATEST, run_phase

    with pytest.raises(InvalidArgumentError):
        run_phase(train_config, manifest, 2, tmp_path / "a")
    with pytest.raises(FileNotFoundError):
        run_phase(
            train_config, manifest, 2, tmp_path / "b", init_checkpoint=tmp_path / "x"
        )

    run_phase(train_config, manifest, 1, tmp_path / "p1")
    init = tmp_path / "p1" / LATEST
    run_phase(train_config, manifest, 2, tmp_path / "p2", init_checkpoint=init)
    with pytest.raises(CheckpointError):
        run_phase(
            train_config,
            manifest,
            2,
            tmp_path / "p3",
            init_checkpoint=tmp_path / "p2" / LATEST,
        )


def test_identical_seeds_give_identical_runs(train_config, manifest, tmp_path):
    from trainer import LATEST, METRICS_FILE, run_phase

    for name in ("a", "b"):
        run_phase(train_config, manifest, 1, tmp_path / name)

    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / METRICS_FILE).read_bytes() == (b / METRICS_FILE).read_bytes()
    assert (a / LATEST).read_bytes() == (b / LATEST).read_bytes()


def test_resume_continues_the_same_trajectory(train_config, manifest, tmp_path):
    from checkpoint import load_checkpoint
    from trainer import LATEST, METRICS_FILE, run_phase

    run_phase(train_config, manifest, 1, tmp_path / "full")
    short = train_config.model_copy(update={"pretrain_steps": 2})
    run_phase(short, manifest, 1, tmp_path / "split")
    run_phase(train_config, manifest, 1, tmp_path / "split", resume=True)

    full = load_checkpoint(tmp_path / "full" / LATEST)
    split = load_checkpoint(tmp_path / "split" / LATEST)
    assert split.meta.step == 3
    for key, value in full.generator.state_dict().items():
        assert torch.equal(split.generator.state_dict()[key], value), key
    for key, value in full.discriminator.state_dict().items():
        assert torch.equal(split.discriminator.state_dict()[key], value), key

    full_rows = _rows(tmp_path / "full" / METRICS_FILE)
    split_rows = _rows(tmp_path / "split" / METRICS_FILE)
    assert [row["step"] for row in split_rows] == ["0", "1", "2", "3"]
    assert split_rows[3]["loss_G"] == full_rows[3]["loss_G"]
    assert split_rows[3]["loss_D"] == full_rows[3]["loss_D"]


def test_metric_log_keeps_rows_up_to_resume_step(tmp_path):
    from models import MetricRow
    from trainer import MetricLog

    path = tmp_path / "metrics.csv"
    log = MetricLog(path, wallclock=True)
    for step in range(4):
        log.append(MetricRow(step=step, loss_D=1.0, loss_G=2.0, wallclock=0.5))
    MetricLog(path, wallclock=True, keep_until=1)
    rows = _rows(path)

    assert [row["step"] for row in rows] == ["0", "1"]
    assert rows[0]["wallclock"] == "0.5"
    assert rows[0]["r1"] == ""
