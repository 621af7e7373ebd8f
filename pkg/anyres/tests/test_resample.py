import math

import numpy as np
import pytest
import torch


def _reference_weights(n_in, n_out, a=3):
    """Direct per-output Lanczos sums with clamp-to-edge taps."""

    scale = n_in / n_out
    stretch = max(scale, 1.0)
    support = a * stretch
    weights = np.zeros((n_out, n_in))
    for k in range(n_out):
        center = (k + 0.5) * scale - 0.5
        total = 0.0
        for tap in range(math.floor(center - support), math.ceil(center + support) + 1):
            x = (tap - center) / stretch
            if abs(x) >= a:
                continue
            w = np.sinc(x) * np.sinc(x / a)
            weights[k, min(max(tap, 0), n_in - 1)] += w
            total += w
        weights[k] /= total
    return weights


def test_resample_matches_direct_reference():
    from resample import resample

    rng = np.random.default_rng(0)
    for _ in range(50):
        in_h, in_w, out_h, out_w = (int(v) for v in rng.integers(3, 14, size=4))
        img = rng.uniform(0, 1, size=(3, in_h, in_w))
        expected = np.einsum(
            "ki,cij,lj->ckl",
            _reference_weights(in_h, out_h),
            img,
            _reference_weights(in_w, out_w),
        )

        got = resample(torch.from_numpy(img), out_h, out_w, a=3).numpy()

        assert np.abs(got - expected).max() <= 1e-6


def test_resample_preserves_constants():
    from resample import resample

    img = torch.full((3, 17, 23), 0.37, dtype=torch.float64)
    for out_h, out_w in [(5, 9), (40, 31), (17, 8), (64, 64)]:
        out = resample(img, out_h, out_w)
        assert out.shape == (3, out_h, out_w)
        assert torch.allclose(out, torch.full_like(out, 0.37), atol=1e-6)


def test_resample_is_linear():
    from resample import resample

    gen = torch.Generator().manual_seed(11)
    a = torch.rand((3, 37, 29), generator=gen, dtype=torch.float64)
    b = torch.rand((3, 37, 29), generator=gen, dtype=torch.float64)
    alpha, beta = 0.3, -1.7
    for out_h, out_w in [(12, 9), (37, 29), (80, 61)]:
        mixed = resample(alpha * a + beta * b, out_h, out_w)
        separate = alpha * resample(a, out_h, out_w) + beta * resample(b, out_h, out_w)
        assert torch.allclose(mixed, separate, atol=1e-6)


def test_resample_identity_is_bit_exact():
    from resample import resample

    img = torch.rand(3, 12, 9, dtype=torch.float64)
    out = resample(img, 12, 9)

    assert torch.equal(out, img)
    assert out.data_ptr() != img.data_ptr()


def test_resample_region_is_slice_of_full_resample():
    from resample import resample, resample_region

    img = torch.rand(3, 30, 30, dtype=torch.float64)
    full = resample(img, 48, 48)
    region = resample_region(img, 48, 48, 10, 21, 16, 16)

    assert torch.allclose(region, full[:, 10:26, 21:37], atol=1e-12)


def test_resample_is_differentiable():
    from resample import resample

    img = torch.rand(3, 10, 10, dtype=torch.float64, requires_grad=True)
    resample(img, 4, 4).sum().backward()

    assert img.grad is not None
    assert torch.isfinite(img.grad).all()


def test_square_crop_bounds():
    from errors import InvalidArgumentError
    from resample import square_crop

    img = torch.rand(3, 10, 14)
    crop = square_crop(img, 0, 4, 10)
    assert torch.equal(crop, img[:, :, 4:14])

    with pytest.raises(InvalidArgumentError):
        square_crop(img, 1, 0, 10)
    with pytest.raises(InvalidArgumentError):
        square_crop(img, 0, 5, 10)


def test_lanczos_kernel_values():
    from resample import lanczos_kernel

    assert lanczos_kernel(0.0) == 1.0
    assert lanczos_kernel(3.0, a=3) == 0.0
    assert abs(lanczos_kernel(1.0, a=3)) < 1e-12
    assert lanczos_kernel(0.5, a=3) > 0


def test_base_mask_covers_quadrant():
    from models import PatchSpec
    from resample import base_mask

    p = 16
    mask = base_mask(PatchSpec(s=2 * p, v=(0.25, 0.25), p=p))

    assert mask.sum().item() == (p // 2) ** 2
    assert mask[: p // 2, : p // 2].min().item() == 1.0


def test_warp_to_base_global_is_identity():
    from models import PatchSpec
    from resample import warp_to_base

    patch = torch.rand(3, 8, 8, dtype=torch.float64)
    warped = warp_to_base(patch, PatchSpec.global_view(8))

    assert torch.equal(warped.pixels, patch)
    assert warped.coverage == 64


def _pattern_source(kind, size, seed):
    from corpus import render_pattern

    pixels = render_pattern(kind, size, size, np.random.default_rng(seed))
    return torch.from_numpy(pixels.transpose(2, 0, 1).copy())


def _round_trip_errors(source, p, draws, seed):
    from geometry import make_spec
    from resample import resample, resample_region, warp_to_base

    size = source.shape[-1]
    base = resample(source, p, p)
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(draws):
        s = int(rng.integers(p + 1, size + 1))
        top, left = (int(v) for v in rng.integers(0, s - p + 1, size=2))
        spec = make_spec(s, ((left + p / 2) / s, (top + p / 2) / s), p)
        patch = resample_region(source, s, s, top, left, p, p)
        warped = warp_to_base(patch, spec)
        covered = warped.mask.bool()
        if covered.any():
            error = (warped.pixels - base * warped.mask).abs()[:, covered]
            errors.append(error.mean().item())
    return errors


def test_warp_round_trip_matches_downsample_then_crop():
    source = _pattern_source("gradient", 96, seed=3)
    errors = _round_trip_errors(source, p=16, draws=100, seed=5)

    assert len(errors) == 100
    assert max(errors) <= 1e-3


@pytest.mark.parametrize("kind,bound", [("circles", 1e-2), ("checker", 2e-2)])
def test_warp_round_trip_on_hard_edges(kind, bound):
    source = _pattern_source(kind, 96, seed=3)
    errors = _round_trip_errors(source, p=16, draws=100, seed=5)

    assert float(np.mean(errors)) <= bound


def test_warp_round_trip_detects_misplaced_patches():
    from geometry import make_spec
    from resample import resample, resample_region, warp_to_base

    p, s = 16, 32
    source = _pattern_source("gradient", 96, seed=3)
    base = resample(source, p, p)
    patch = resample_region(source, s, s, 8, 8, p, p)

    def error(v):
        warped = warp_to_base(patch, make_spec(s, v, p))
        covered = warped.mask.bool()
        return (warped.pixels - base * warped.mask).abs()[:, covered].mean().item()

    assert error((0.5, 0.5)) <= 1e-3
    # three base pixels off along either axis
    shifted = max(error((0.5 + 3 / p, 0.5)), error((0.5, 0.5 + 3 / p)))
    assert shifted > 5e-3


def test_warp_from_base_keeps_constants():
    from geometry import make_spec
    from resample import warp_from_base

    base = torch.full((3, 16, 16), 0.25, dtype=torch.float64)
    out = warp_from_base(base, make_spec(40, (0.3, 0.6), 16))

    assert out.shape == (3, 16, 16)
    assert torch.allclose(out, base, atol=1e-9)


def test_warps_reject_wrong_shapes():
    from errors import InvalidArgumentError
    from geometry import make_spec
    from resample import warp_from_base, warp_to_base

    spec = make_spec(32, (0.5, 0.5), 16)
    with pytest.raises(InvalidArgumentError):
        warp_to_base(torch.zeros(3, 8, 8), spec)
    with pytest.raises(InvalidArgumentError):
        warp_from_base(torch.zeros(3, 8, 8), spec)
