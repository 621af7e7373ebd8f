"""Multi-scale evaluation: pFID, FID@res, extrapolation sweeps and spectra."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image, ImageDraw, ImageFont
from scipy import fft

from datapipe import SamplingPolicy, native_square, rng_stream, sample_real_patch
from embedder import RandomConvEmbedder
from errors import EmptyDatasetError, InvalidArgumentError
from geometry import make_spec
from image_io import save_png, to_pil
from metrics import FeatureStats, StatsAccumulator, frechet_distance
from models import Manifest, PatchSpec, SweepEntry, SweepReport
from resample import resample, square_crop

LOG = logging.getLogger(__name__)

# Generated patches per forward pass.
GEN_BATCH = 64

PatchGenerator = Callable[[torch.Tensor, Sequence[PatchSpec]], torch.Tensor]


def latents(seed: int, name: str, start: int, count: int, z_dim: int) -> torch.Tensor:
    """Latent ``i`` comes from its own stream, independent of batching."""

    rows = [
        rng_stream(seed, name, 0, index).standard_normal(z_dim)
        for index in range(start, start + count)
    ]
    return torch.from_numpy(np.stack(rows)).float()


def _z_dim(generator: object) -> int:
    return int(getattr(getattr(generator, "config", None), "z_dim", 64))


def _embed_patches(
    patches: torch.Tensor,
    embedder: RandomConvEmbedder,
    rng: np.random.Generator,
    downsample: bool,
) -> np.ndarray:
    """Random embedder-sized sub-crops when patches are larger, unless downsampling."""

    size = embedder.input_size
    p = patches.shape[-1]
    if not downsample and p > size:
        crops = []
        for patch in patches:
            top, left = (int(v) for v in rng.integers(0, p - size + 1, size=2))
            crops.append(square_crop(patch, top, left, size))
        patches = torch.stack(crops)
    return embedder.embed(patches)


@dataclass(frozen=True)
class RealPatchSet:
    specs: List[PatchSpec]
    stats: FeatureStats


def real_patch_set(
    manifest: Manifest,
    embedder: RandomConvEmbedder,
    n_patches: int,
    seed: int,
    policy: SamplingPolicy | None = None,
    downsample: bool = False,
    stream: str = "pfid-real",
) -> RealPatchSet:
    """Embed ``n_patches`` real patches from the non-global sampling branch."""

    if n_patches < 2:
        raise InvalidArgumentError(f"pFID needs at least 2 patches, got {n_patches}")
    pol = (policy or SamplingPolicy.from_manifest(manifest)).with_global_prob(0.0)
    if not pol.hr_sizes:
        raise EmptyDatasetError("pFID needs a non-empty HR subset")
    crop_rng = rng_stream(seed, stream + "-crop")
    acc = StatsAccumulator()
    specs: List[PatchSpec] = []
    for start in range(0, n_patches, GEN_BATCH):
        items = [
            sample_real_patch(manifest, rng_stream(seed, stream, 0, index), pol)
            for index in range(start, min(start + GEN_BATCH, n_patches))
        ]
        specs.extend(item.spec for item in items)
        pixels = torch.stack([item.pixels for item in items])
        acc.update(_embed_patches(pixels, embedder, crop_rng, downsample))
    return RealPatchSet(specs=specs, stats=acc.result())


@torch.no_grad()
def generated_patch_stats(
    generator: PatchGenerator,
    specs: Sequence[PatchSpec],
    embedder: RandomConvEmbedder,
    seed: int,
    downsample: bool = False,
) -> FeatureStats:
    """Fresh latent per patch, synthesized at the given specs."""

    z_dim = _z_dim(generator)
    crop_rng = rng_stream(seed, "pfid-fake-crop")
    acc = StatsAccumulator()
    for start in range(0, len(specs), GEN_BATCH):
        chunk = list(specs[start : start + GEN_BATCH])
        z = latents(seed, "pfid-z", start, len(chunk), z_dim)
        patches = generator(z, chunk)
        acc.update(_embed_patches(patches, embedder, crop_rng, downsample))
    return acc.result()


def pfid(
    manifest: Manifest,
    generator: PatchGenerator,
    embedder: RandomConvEmbedder,
    n_patches: int = 2048,
    seed: int = 0,
    policy: SamplingPolicy | None = None,
    downsample: bool = False,
    real: RealPatchSet | None = None,
) -> float:
    """Patch FID between real HR patches and generated patches at the same specs.

    ``downsample`` resizes whole patches to the embedder size instead of
    taking sub-crops, which gives the ds-pFID variant.
    """

    reference = real or real_patch_set(
        manifest, embedder, n_patches, seed, policy, downsample
    )
    fake = generated_patch_stats(generator, reference.specs, embedder, seed, downsample)
    value = frechet_distance(reference.stats, fake)
    LOG.debug("pFID over %d patches: %.4f", len(reference.specs), value)
    return value


def pfid_baseline(
    manifest: Manifest,
    embedder: RandomConvEmbedder,
    n_patches: int = 2048,
    seed: int = 0,
    policy: SamplingPolicy | None = None,
    downsample: bool = False,
) -> float:
    """Real-vs-real noise floor: two independent draws of ``n_patches`` each."""

    first = real_patch_set(manifest, embedder, n_patches, seed, policy, downsample)
    second = real_patch_set(
        manifest, embedder, n_patches, seed, policy, downsample, stream="pfid-baseline"
    )
    return frechet_distance(first.stats, second.stats)


def pfid_at_scale(
    manifest: Manifest,
    generator: PatchGenerator,
    embedder: RandomConvEmbedder,
    s: int,
    n_patches: int = 512,
    seed: int = 0,
) -> Optional[float]:
    """pFID with every patch drawn at scale ``s``; ``None`` without data at ``s``."""

    policy = SamplingPolicy.from_manifest(manifest, s_lo=s, s_hi=s, global_prob=0.0)
    if not policy.hr_sizes:
        LOG.warning("No HR image supports scale %d; skipping pFID at that scale", s)
        return None
    return pfid(manifest, generator, embedder, n_patches, seed, policy)


def real_global_images(
    manifest: Manifest, res: int, n: int, seed: int, stream: str = "fid-real"
) -> torch.Tensor:
    """``n`` random square crops of whole records, Lanczos-resized to ``res``."""

    if not manifest.records:
        raise EmptyDatasetError("manifest has no records")
    images = []
    for index in range(n):
        rng = rng_stream(seed, stream, 0, index)
        record = manifest.records[int(rng.integers(len(manifest.records)))]
        crop_top = int(rng.integers(0, record.height - record.s_im + 1))
        crop_left = int(rng.integers(0, record.width - record.s_im + 1))
        square = native_square(record, crop_top, crop_left)
        images.append(resample(square, res, res).float())
    return torch.stack(images)


def image_stats(images: torch.Tensor, embedder: RandomConvEmbedder) -> FeatureStats:
    acc = StatsAccumulator()
    for start in range(0, images.shape[0], GEN_BATCH):
        acc.update(embedder.embed(images[start : start + GEN_BATCH]))
    return acc.result()


@torch.no_grad()
def generated_global_images(generator, res: int, n: int, seed: int) -> torch.Tensor:
    z = latents(seed, "fid-z", 0, n, _z_dim(generator))
    return torch.stack([generator.synthesize_image(z[i], res) for i in range(n)])


def fid_at_res(
    manifest: Manifest,
    generator,
    res: int,
    embedder: RandomConvEmbedder,
    n: int = 512,
    seed: int = 0,
    real_stats: FeatureStats | None = None,
) -> float:
    """Global-image FID with both sides at resolution ``res``."""

    if n < 2:
        raise InvalidArgumentError(f"FID needs at least 2 images, got {n}")
    reference = real_stats or image_stats(
        real_global_images(manifest, res, n, seed), embedder
    )
    fake = image_stats(generated_global_images(generator, res, n, seed), embedder)
    return frechet_distance(reference, fake)


def fid_baseline(
    manifest: Manifest,
    res: int,
    embedder: RandomConvEmbedder,
    n: int = 512,
    seed: int = 0,
) -> float:
    first = image_stats(real_global_images(manifest, res, n, seed), embedder)
    second = image_stats(
        real_global_images(manifest, res, n, seed, stream="fid-baseline"), embedder
    )
    return frechet_distance(first, second)


def _clamp_center(v: Tuple[float, float], s: int, p: int) -> Tuple[float, float]:
    half = p / (2.0 * s)
    return tuple(min(max(c, half), 1.0 - half) for c in v)  # type: ignore[return-value]


def _caption_cell(tile: Image.Image, text: str) -> Image.Image:
    band = 12
    cell = Image.new("RGB", (tile.width, tile.height + band), (0, 0, 0))
    cell.paste(tile, (0, band))
    draw = ImageDraw.Draw(cell)
    draw.text((1, 0), text, fill=(255, 255, 255), font=ImageFont.load_default())
    return cell


@torch.no_grad()
def extrapolation_sweep(
    generator,
    z_set: torch.Tensor,
    s_list: Sequence[int],
    v: Tuple[float, float] = (0.5, 0.5),
    expected_scale: Optional[float] = None,
    training_s_max: Optional[int] = None,
    sheet_path: Path | str | None = None,
    manifest: Manifest | None = None,
    embedder: RandomConvEmbedder | None = None,
    n_proxy: int = 0,
    seed: int = 0,
) -> Tuple[torch.Tensor, SweepReport]:
    """Render a fixed-center crop at each scale for every latent.

    Returns the ``(Z, S, 3, p, p)`` renders and a report flagging scales above
    the mean training scale and above the training ``s_max``.
    """

    scales = [int(s) for s in s_list]
    if not scales:
        raise InvalidArgumentError("scale list is empty")
    if scales != sorted(scales):
        raise InvalidArgumentError(f"scales must be ascending, got {scales}")
    p = generator.config.p
    s_max = training_s_max or generator.config.s_max
    z_set = z_set.reshape(-1, generator.config.z_dim)
    renders = torch.stack(
        [
            torch.stack(
                [
                    generator.synthesize_patch(
                        z, make_spec(s, _clamp_center(v, s, p), p)
                    )
                    for s in scales
                ]
            )
            for z in z_set
        ]
    )
    entries = []
    for s in scales:
        proxy = None
        if manifest is not None and embedder is not None and n_proxy >= 2:
            proxy = pfid_at_scale(manifest, generator, embedder, s, n_proxy, seed)
        entries.append(
            SweepEntry(
                s=s,
                v=_clamp_center(v, s, p),
                zoom=p / s,
                above_expected_scale=expected_scale is not None and s > expected_scale,
                above_training_max=s > s_max,
                proxy_pfid=proxy,
            )
        )
    report = SweepReport(
        entries=entries,
        expected_scale=expected_scale,
        training_s_max=s_max,
        seed=seed,
        sheet_path=str(sheet_path) if sheet_path is not None else None,
    )
    if sheet_path is not None:
        write_contact_sheet(renders, entries, sheet_path)
    return renders, report


def write_contact_sheet(
    renders: torch.Tensor, entries: Sequence[SweepEntry], path: Path | str
) -> Path:
    """One row per latent, one captioned column per scale."""

    rows, cols = renders.shape[0], renders.shape[1]
    cells = [
        [
            _caption_cell(
                to_pil(renders[r, c]),
                f"s={entries[c].s} v={entries[c].v[0]:.2f},{entries[c].v[1]:.2f}",
            )
            for c in range(cols)
        ]
        for r in range(rows)
    ]
    width, height = cells[0][0].size
    sheet = Image.new("RGB", (width * cols, height * rows), (0, 0, 0))
    for r, row in enumerate(cells):
        for c, cell in enumerate(row):
            sheet.paste(cell, (c * width, r * height))
    return save_png(sheet, path)


@dataclass(frozen=True)
class SpectrumProfile:
    frequency: np.ndarray
    power: np.ndarray
    log_power: np.ndarray


def spectrum_profile(images: Sequence[torch.Tensor] | torch.Tensor) -> SpectrumProfile:
    """Azimuthally averaged power spectrum of grayscale images.

    Frequency is in cycles per image, from DC to the corner radius.
    """

    batch = list(images)
    if not batch:
        raise InvalidArgumentError("spectrum needs at least one image")
    shapes = {tuple(img.shape[-2:]) for img in batch}
    if len(shapes) != 1:
        raise InvalidArgumentError(f"images have mixed sizes: {sorted(shapes)}")
    height, width = shapes.pop()
    if height != width:
        raise InvalidArgumentError(f"images must be square, got {height}x{width}")
    gray = np.stack(
        [
            img.detach()
            .to("cpu", torch.float64)
            .reshape(-1, height, width)
            .mean(0)
            .numpy()
            for img in batch
        ]
    )
    spectrum = fft.fftshift(fft.fft2(gray), axes=(-2, -1))
    power = (np.abs(spectrum) ** 2).mean(axis=0) / float(height * width) ** 2
    ys, xs = np.indices((height, width))
    radius = np.rint(np.hypot(xs - width // 2, ys - height // 2)).astype(np.int64)
    totals = np.bincount(radius.ravel(), weights=power.ravel())
    counts = np.bincount(radius.ravel())
    radial = totals / np.maximum(counts, 1)
    frequency = np.arange(radial.shape[0], dtype=np.float64)
    return SpectrumProfile(
        frequency=frequency, power=radial, log_power=np.log10(radial + 1e-20)
    )


def write_spectrum(
    profile: SpectrumProfile, csv_path: Path | str, png_path: Path | str
) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    csv_target = Path(csv_path)
    csv_target.parent.mkdir(parents=True, exist_ok=True)
    with csv_target.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["frequency", "power", "log_power"])
        for row in zip(profile.frequency, profile.power, profile.log_power):
            writer.writerow([f"{value:.10g}" for value in row])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(profile.frequency[1:], profile.log_power[1:])
    ax.set_xlabel("frequency (cycles / image)")
    ax.set_ylabel("log10 power")
    fig.tight_layout()
    Path(png_path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(png_path, dpi=100)
    plt.close(fig)


def spectrum_gap(a: SpectrumProfile, b: SpectrumProfile) -> float:
    """Mean absolute log10-power difference, DC bin excluded."""

    if a.log_power.shape != b.log_power.shape:
        raise InvalidArgumentError(
            f"spectra have {a.log_power.shape[0]} and {b.log_power.shape[0]} bins"
        )
    return float(np.abs(a.log_power[1:] - b.log_power[1:]).mean())
