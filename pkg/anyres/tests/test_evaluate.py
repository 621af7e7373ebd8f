import math

import numpy as np
import pytest
import torch


@pytest.fixture
def generator(generator_config):
    from netcore import Generator

    return Generator(generator_config).eval()


def test_embedder_is_deterministic():
    from embedder import RandomConvEmbedder

    images = torch.rand(3, 3, 20, 20)
    first = RandomConvEmbedder(seed=1).embed(images)
    second = RandomConvEmbedder(seed=1).embed(images)

    assert first.shape == (3, 128)
    assert first.dtype == np.float64
    assert np.array_equal(first, second)
    assert RandomConvEmbedder(seed=1).identifier == "randconv-64-128-s1"


def test_latents_do_not_depend_on_batching():
    from evaluate import latents

    whole = latents(0, "z", 0, 5, 8)
    part = latents(0, "z", 2, 3, 8)

    assert torch.equal(whole[2:], part)


def test_pfid_of_real_patch_replay_is_zero(manifest):
    from datapipe import SamplingPolicy, rng_stream, sample_real_patch
    from embedder import RandomConvEmbedder
    from evaluate import pfid

    n, seed = 8, 3
    policy = SamplingPolicy.from_manifest(manifest, global_prob=0.0)
    replay = [
        sample_real_patch(manifest, rng_stream(seed, "pfid-real", 0, i), policy).pixels
        for i in range(n)
    ]
    served = []

    def copy_generator(z, specs):
        start = len(served)
        served.extend(specs)
        return torch.stack(replay[start : start + len(specs)])

    value = pfid(manifest, copy_generator, RandomConvEmbedder(), n, seed, policy)

    assert value == pytest.approx(0.0, abs=1e-6)


def _gaussian_blur(images, sigma=1.5, radius=3):
    taps = torch.arange(-radius, radius + 1, dtype=images.dtype)
    kernel = torch.exp(-(taps**2) / (2 * sigma**2))
    kernel = kernel / kernel.sum()
    channels = images.shape[1]
    rows = kernel.view(1, 1, -1, 1).repeat(channels, 1, 1, 1)
    cols = kernel.view(1, 1, 1, -1).repeat(channels, 1, 1, 1)
    padded = torch.nn.functional.pad(images, (radius,) * 4, mode="replicate")
    out = torch.nn.functional.conv2d(padded, rows, groups=channels)
    return torch.nn.functional.conv2d(out, cols, groups=channels)


def test_blur_costs_more_pfid_than_ds_pfid(manifest):
    from datapipe import SamplingPolicy, rng_stream, sample_real_patch
    from embedder import RandomConvEmbedder
    from evaluate import pfid

    n, seed = 64, 2
    policy = SamplingPolicy.from_manifest(manifest, global_prob=0.0)
    replay = torch.stack(
        [
            sample_real_patch(manifest, rng_stream(seed, "pfid-real", 0, i), policy)
            .pixels.float()
            for i in range(n)
        ]
    )

    def serving(images):
        def generator(z, specs):
            assert len(specs) == n
            return images

        return generator

    embedder = RandomConvEmbedder(input_size=8)

    def score(images, downsample):
        return pfid(
            manifest, serving(images), embedder, n, seed, policy, downsample
        )

    blurred = _gaussian_blur(replay)
    pfid_cost = score(blurred, False) - score(replay, False)
    ds_pfid_cost = score(blurred, True) - score(replay, True)

    assert pfid_cost > 0
    assert pfid_cost > ds_pfid_cost


def test_pfid_is_finite_and_reproducible(manifest, generator):
    from embedder import RandomConvEmbedder
    from evaluate import pfid, pfid_baseline

    embedder = RandomConvEmbedder()
    first = pfid(manifest, generator, embedder, n_patches=8, seed=0)
    second = pfid(manifest, generator, embedder, n_patches=8, seed=0)
    downsampled = pfid(manifest, generator, embedder, n_patches=8, downsample=True)
    baseline = pfid_baseline(manifest, embedder, n_patches=8)

    assert math.isfinite(first) and first >= 0
    assert first == second
    assert math.isfinite(downsampled)
    assert math.isfinite(baseline) and baseline >= 0


def test_pfid_at_scale_without_support_is_none(manifest, generator):
    from embedder import RandomConvEmbedder
    from evaluate import pfid_at_scale

    embedder = RandomConvEmbedder()

    assert pfid_at_scale(manifest, generator, embedder, 1000, n_patches=4) is None
    assert math.isfinite(pfid_at_scale(manifest, generator, embedder, 32, n_patches=4))


def test_pfid_needs_hr_records(corpus_dir, generator):
    from datapipe import ingest
    from embedder import RandomConvEmbedder
    from errors import EmptyDatasetError
    from evaluate import pfid

    manifest = ingest(corpus_dir, p=16, hr_threshold=1000)
    with pytest.raises(EmptyDatasetError):
        pfid(manifest, generator, RandomConvEmbedder(), n_patches=4)


def test_fid_at_res(manifest, generator):
    from embedder import RandomConvEmbedder
    from errors import InvalidArgumentError
    from evaluate import fid_at_res, fid_baseline, real_global_images

    embedder = RandomConvEmbedder()
    images = real_global_images(manifest, 24, 4, seed=0)
    value = fid_at_res(manifest, generator, 16, embedder, n=4)
    baseline = fid_baseline(manifest, 16, embedder, n=4)

    assert images.shape == (4, 3, 24, 24)
    assert images.dtype == torch.float32
    assert math.isfinite(value) and math.isfinite(baseline)
    with pytest.raises(InvalidArgumentError):
        fid_at_res(manifest, generator, 16, embedder, n=1)


def test_extrapolation_sweep_flags_and_sheet(generator, tmp_path):
    from evaluate import extrapolation_sweep, latents

    z = latents(0, "sweep", 0, 2, 8)
    renders, report = extrapolation_sweep(
        generator,
        z,
        [16, 32, 64],
        expected_scale=30.0,
        training_s_max=32,
        sheet_path=tmp_path / "a.png",
    )
    extrapolation_sweep(
        generator,
        z,
        [16, 32, 64],
        expected_scale=30.0,
        training_s_max=32,
        sheet_path=tmp_path / "b.png",
    )

    assert renders.shape == (2, 3, 3, 16, 16)
    assert [e.above_training_max for e in report.entries] == [False, False, True]
    assert [e.above_expected_scale for e in report.entries] == [False, True, True]
    assert [e.zoom for e in report.entries] == [1.0, 0.5, 0.25]
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_extrapolation_sweep_clamps_center(generator):
    from evaluate import extrapolation_sweep, latents

    _, report = extrapolation_sweep(
        generator, latents(0, "sweep", 0, 1, 8), [16, 64], v=(0.05, 0.95)
    )

    assert report.entries[0].v == (0.5, 0.5)
    assert report.entries[1].v == (0.125, 0.875)


@pytest.mark.parametrize("scales", [[], [64, 32]])
def test_extrapolation_sweep_rejects_bad_scale_lists(generator, scales):
    from errors import InvalidArgumentError
    from evaluate import extrapolation_sweep, latents

    with pytest.raises(InvalidArgumentError):
        extrapolation_sweep(generator, latents(0, "sweep", 0, 1, 8), scales)


def test_spectrum_finds_the_dominant_frequency():
    from evaluate import spectrum_profile

    size, cycles = 32, 5
    xs = torch.arange(size, dtype=torch.float64) / size
    wave = 0.5 + 0.4 * torch.cos(2 * math.pi * cycles * xs)
    image = wave[None, None, :].expand(3, size, size)
    profile = spectrum_profile([image])

    assert profile.frequency[0] == 0.0
    assert int(np.argmax(profile.power[1:])) + 1 == cycles


def test_spectrum_rejects_mixed_or_non_square_images():
    from errors import InvalidArgumentError
    from evaluate import spectrum_profile

    with pytest.raises(InvalidArgumentError):
        spectrum_profile([torch.rand(3, 8, 8), torch.rand(3, 16, 16)])
    with pytest.raises(InvalidArgumentError):
        spectrum_profile([torch.rand(3, 8, 12)])
    with pytest.raises(InvalidArgumentError):
        spectrum_profile([])


def test_write_spectrum_outputs(tmp_path):
    from evaluate import spectrum_gap, spectrum_profile, write_spectrum

    profile = spectrum_profile(torch.rand(4, 3, 16, 16))
    write_spectrum(profile, tmp_path / "s.csv", tmp_path / "s.png")
    lines = (tmp_path / "s.csv").read_text().splitlines()

    assert lines[0] == "frequency,power,log_power"
    assert len(lines) == 1 + profile.frequency.shape[0]
    assert (tmp_path / "s.png").stat().st_size > 0
    assert spectrum_gap(profile, profile) == 0.0
