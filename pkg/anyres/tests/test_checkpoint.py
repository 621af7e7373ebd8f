import copy
import struct

import pytest
import torch


def _populated(generator_config):
    from models import CheckpointMeta, PatchSpec
    from netcore import build_networks

    generator, discriminator = build_networks(generator_config)
    teacher = copy.deepcopy(generator).requires_grad_(False)
    opt_g = torch.optim.Adam(generator.parameters(), lr=1e-3, betas=(0.0, 0.99))
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=1e-3, betas=(0.0, 0.99))
    z = torch.randn(2, generator_config.z_dim)
    loss = discriminator(generator(z, [PatchSpec.global_view(16)] * 2)).mean()
    loss.backward()
    opt_g.step()
    opt_d.step()
    meta = CheckpointMeta(
        phase=2,
        step=7,
        seed=3,
        config_hash="abc",
        code_hash="def",
        generator=generator_config,
        best_proxy=1.25,
    )
    optimizers = {"G": opt_g.state_dict(), "D": opt_d.state_dict()}
    return meta, generator, discriminator, teacher, optimizers


def test_save_load_save_is_byte_identical(generator_config, tmp_path):
    from checkpoint import load_checkpoint, save_checkpoint

    meta, generator, discriminator, teacher, optimizers = _populated(generator_config)
    first = save_checkpoint(
        tmp_path / "a.ckpt", meta, generator, discriminator, teacher, optimizers
    )
    loaded = load_checkpoint(first)
    second = save_checkpoint(
        tmp_path / "b.ckpt",
        loaded.meta,
        loaded.generator,
        loaded.discriminator,
        loaded.teacher,
        loaded.optimizer_states,
    )

    assert first.read_bytes() == second.read_bytes()
    assert loaded.meta == meta
    for key, value in generator.state_dict().items():
        assert torch.equal(loaded.generator.state_dict()[key], value)
    assert not any(p.requires_grad for p in loaded.teacher.parameters())


def test_loaded_optimizer_state_resumes(generator_config, tmp_path):
    from checkpoint import load_checkpoint, save_checkpoint

    meta, generator, discriminator, teacher, optimizers = _populated(generator_config)
    path = save_checkpoint(
        tmp_path / "a.ckpt", meta, generator, discriminator, teacher, optimizers
    )
    loaded = load_checkpoint(path)
    opt = torch.optim.Adam(loaded.generator.parameters(), lr=1e-3, betas=(0.0, 0.99))
    opt.load_state_dict(loaded.optimizer_states["G"])

    assert opt.state_dict()["param_groups"][0]["betas"] == (0.0, 0.99)
    original = optimizers["G"]["state"]
    restored = opt.state_dict()["state"]
    assert sorted(restored) == sorted(original)
    for index, entry in original.items():
        assert torch.equal(restored[index]["exp_avg"], entry["exp_avg"])


def test_checkpoint_without_teacher(generator_config, tmp_path):
    from checkpoint import load_checkpoint, save_checkpoint

    meta, generator, discriminator, _, _ = _populated(generator_config)
    path = save_checkpoint(
        tmp_path / "g.ckpt",
        meta.model_copy(update={"phase": 1}),
        generator,
        discriminator,
    )
    loaded = load_checkpoint(path)

    assert loaded.teacher is None
    assert loaded.optimizer_states == {}


def test_version_mismatch_is_reported(generator_config, tmp_path):
    from checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
    from errors import CheckpointVersionError

    meta, generator, discriminator, _, _ = _populated(generator_config)
    path = save_checkpoint(tmp_path / "v.ckpt", meta, generator, discriminator)
    raw = bytearray(path.read_bytes())
    raw[8:12] = struct.pack("<I", FORMAT_VERSION + 1)
    path.write_bytes(bytes(raw))

    with pytest.raises(CheckpointVersionError) as info:
        load_checkpoint(path)
    assert info.value.found == FORMAT_VERSION + 1
    assert info.value.expected == FORMAT_VERSION


@pytest.mark.parametrize("damage", ["truncate", "magic", "trailing", "header"])
def test_damaged_checkpoints_are_rejected(generator_config, tmp_path, damage):
    from checkpoint import load_checkpoint, save_checkpoint
    from errors import CheckpointError

    meta, generator, discriminator, _, _ = _populated(generator_config)
    path = save_checkpoint(tmp_path / "d.ckpt", meta, generator, discriminator)
    raw = path.read_bytes()
    if damage == "truncate":
        raw = raw[: len(raw) - 100]
    elif damage == "magic":
        raw = b"NOTACKPT" + raw[8:]
    elif damage == "trailing":
        raw = raw + b"\x00\x01"
    else:
        raw = raw[:16] + b"x" + raw[17:]
    path.write_bytes(raw)

    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_checkpoint_is_a_checkpoint_error(tmp_path):
    from checkpoint import load_checkpoint
    from errors import CheckpointError

    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")
