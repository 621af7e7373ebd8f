"""Variable-resolution dataset ingestion and multi-scale patch sampling."""

from __future__ import annotations

import hashlib
import logging
import zlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from errors import EmptyDatasetError
from geometry import make_spec
from image_io import SUPPORTED_SUFFIXES, load_image_u8, probe_size, to_unit
from models import DatasetReport, ImageRecord, Manifest, PatchSpec, TrainConfig
from resample import resample, resample_region, square_crop

LOG = logging.getLogger(__name__)


def rng_stream(
    seed: int, name: str, worker: int = 0, index: int = 0
) -> np.random.Generator:
    """Counter-based stream addressed by ``(seed, name, worker, index)``."""

    key = [int(seed), zlib.crc32(name.encode("utf-8")), int(worker), int(index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def ingest(
    directory: Path | str,
    p: int,
    hr_threshold: Optional[int] = None,
    manifest_path: Path | str | None = None,
) -> Manifest:
    """Index every decodable image under ``directory`` at native resolution.

    Records are ordered by relative path. Images with ``min(w, h) >=
    max(hr_threshold, p)`` are tagged HR, the rest LR.
    """

    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"image directory not found: {root}")
    threshold = max(hr_threshold or p, p)
    files = sorted(
        (path for path in root.rglob("*") if path.suffix.lower() in SUPPORTED_SUFFIXES),
        key=lambda path: path.relative_to(root).as_posix(),
    )
    records: List[ImageRecord] = []
    skipped = 0
    for path in files:
        relative = path.relative_to(root).as_posix()
        try:
            width, height = probe_size(path)
        except (OSError, SyntaxError, ValueError) as exc:
            skipped += 1
            LOG.warning("Skipping undecodable image %s: %s", relative, exc)
            continue
        split = "HR" if min(width, height) >= threshold else "LR"
        records.append(
            ImageRecord(
                id=hashlib.sha1(relative.encode("utf-8")).hexdigest()[:12],
                path=str(path.resolve()),
                width=width,
                height=height,
                split=split,
            )
        )
    if not records:
        raise EmptyDatasetError(f"no decodable images in {root} ({skipped} skipped)")
    manifest = Manifest(records=records, p=p, skipped=skipped)
    LOG.info(
        "Ingested %d images (%d HR, %d LR, %d skipped) from %s",
        len(records),
        len(manifest.hr()),
        len(manifest.lr()),
        skipped,
        root,
    )
    if manifest_path is not None:
        manifest.write(manifest_path)
    return manifest


@dataclass(frozen=True)
class SamplingPolicy:
    """Shared (s, v) sampler for real patches and fake specs.

    ``hr_sizes`` holds ``s_im`` of the HR records eligible for patch draws
    (``s_im >= s_lo``) and ``hr_indices`` their positions in the manifest.
    """

    p: int
    s_lo: int
    s_hi: Optional[int]
    global_prob: float
    n_records: int
    hr_indices: Tuple[int, ...]
    hr_sizes: Tuple[int, ...]

    @classmethod
    def from_manifest(
        cls,
        manifest: Manifest,
        s_lo: Optional[int] = None,
        s_hi: Optional[int] = None,
        global_prob: float = 0.5,
    ) -> "SamplingPolicy":
        lo = s_lo or manifest.p
        eligible = [
            (i, r.s_im)
            for i, r in enumerate(manifest.records)
            if r.split == "HR" and r.s_im >= lo
        ]
        return cls(
            p=manifest.p,
            s_lo=lo,
            s_hi=s_hi,
            global_prob=float(global_prob),
            n_records=len(manifest.records),
            hr_indices=tuple(i for i, _ in eligible),
            hr_sizes=tuple(size for _, size in eligible),
        )

    @classmethod
    def from_config(cls, manifest: Manifest, config: TrainConfig) -> "SamplingPolicy":
        return cls.from_manifest(manifest, config.s_lo, config.s_hi, config.global_prob)

    def with_global_prob(self, global_prob: float) -> "SamplingPolicy":
        return SamplingPolicy(
            p=self.p,
            s_lo=self.s_lo,
            s_hi=self.s_hi,
            global_prob=float(global_prob),
            n_records=self.n_records,
            hr_indices=self.hr_indices,
            hr_sizes=self.hr_sizes,
        )

    def upper_scale(self, s_im: int) -> int:
        return s_im if self.s_hi is None else min(s_im, self.s_hi)

    @property
    def s_max(self) -> Optional[int]:
        """Largest scale the sampler can emit, ``None`` without HR records."""

        if not self.hr_sizes:
            return None
        return max(self.upper_scale(size) for size in self.hr_sizes)


@dataclass(frozen=True)
class _Draw:
    spec: PatchSpec
    record_index: int
    patch_top: int
    patch_left: int


def _draw(rng: np.random.Generator, policy: SamplingPolicy) -> _Draw:
    p = policy.p
    if rng.random() < policy.global_prob:
        index = int(rng.integers(policy.n_records)) if policy.n_records else -1
        return _Draw(PatchSpec.global_view(p), index, 0, 0)
    if not policy.hr_sizes:
        raise EmptyDatasetError("patch draw requested but the HR subset is empty")
    choice = int(rng.integers(len(policy.hr_sizes)))
    s = int(rng.integers(policy.s_lo, policy.upper_scale(policy.hr_sizes[choice]) + 1))
    top = int(rng.integers(0, s - p + 1))
    left = int(rng.integers(0, s - p + 1))
    spec = make_spec(s, ((left + p / 2) / s, (top + p / 2) / s), p)
    return _Draw(spec, policy.hr_indices[choice], top, left)


def sample_fake_spec(rng: np.random.Generator, policy: SamplingPolicy) -> PatchSpec:
    """Draw a spec from the same distribution the real patches follow."""

    return _draw(rng, policy).spec


@dataclass(frozen=True)
class PatchBatchItem:
    """A real patch with everything needed to recompute its pixels."""

    pixels: torch.Tensor
    spec: PatchSpec
    source_id: str
    crop_top: int
    crop_left: int
    patch_top: int
    patch_left: int


# Cached as 8-bit; crops are converted to float on the way out.
@lru_cache(maxsize=64)
def _native_pixels(path: str) -> torch.Tensor:
    return load_image_u8(path)


def native_square(record: ImageRecord, crop_top: int, crop_left: int) -> torch.Tensor:
    """The ``s_im`` square of the native image at the given offset, float64."""

    square = square_crop(_native_pixels(record.path), crop_top, crop_left, record.s_im)
    return to_unit(square, torch.float64)


def extract_patch(
    record: ImageRecord,
    spec: PatchSpec,
    crop_top: int,
    crop_left: int,
    patch_top: int,
    patch_left: int,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Square-crop the native image, resample it to ``s``, cut the p x p patch."""

    square = native_square(record, crop_top, crop_left)
    if spec.is_global:
        pixels = resample(square, spec.p, spec.p)
    else:
        pixels = resample_region(
            square, spec.s, spec.s, patch_top, patch_left, spec.p, spec.p
        )
    return pixels.to(dtype)


def sample_real_patch(
    manifest: Manifest,
    rng: np.random.Generator,
    policy: SamplingPolicy | None = None,
    dtype: torch.dtype = torch.float32,
) -> PatchBatchItem:
    if not manifest.records:
        raise EmptyDatasetError("manifest has no records")
    pol = policy or SamplingPolicy.from_manifest(manifest)
    drawn = _draw(rng, pol)
    record = manifest.records[drawn.record_index]
    crop_top = int(rng.integers(0, record.height - record.s_im + 1))
    crop_left = int(rng.integers(0, record.width - record.s_im + 1))
    pixels = extract_patch(
        record,
        drawn.spec,
        crop_top,
        crop_left,
        drawn.patch_top,
        drawn.patch_left,
        dtype,
    )
    return PatchBatchItem(
        pixels=pixels,
        spec=drawn.spec,
        source_id=record.id,
        crop_top=crop_top,
        crop_left=crop_left,
        patch_top=drawn.patch_top,
        patch_left=drawn.patch_left,
    )


def replay_patch(
    item: PatchBatchItem, manifest: Manifest, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """Recompute a patch from its recorded source, offsets and spec."""

    record = manifest.by_id()[item.source_id]
    return extract_patch(
        record,
        item.spec,
        item.crop_top,
        item.crop_left,
        item.patch_top,
        item.patch_left,
        dtype,
    )


class RealPatchDataset(Dataset):
    """Map-style dataset; item ``i`` is a pure function of ``(seed, stream, i)``.

    Loader workers only partition the index space, so the emitted patches do
    not depend on how many workers run.
    """

    def __init__(
        self,
        manifest: Manifest,
        policy: SamplingPolicy,
        seed: int,
        length: int,
        stream: str = "real",
    ) -> None:
        self.manifest = manifest
        self.policy = policy
        self.seed = seed
        self.length = length
        self.stream = stream

    def __len__(self) -> int:
        return self.length

    def __getitem__(self, index: int) -> PatchBatchItem:
        rng = rng_stream(self.seed, self.stream, 0, index)
        return sample_real_patch(self.manifest, rng, self.policy)


@dataclass(frozen=True)
class PatchBatch:
    pixels: torch.Tensor
    specs: List[PatchSpec]
    source_ids: List[str]


def collate_items(items: Sequence[PatchBatchItem]) -> PatchBatch:
    return PatchBatch(
        pixels=torch.stack([item.pixels for item in items]),
        specs=[item.spec for item in items],
        source_ids=[item.source_id for item in items],
    )


def _seed_worker(worker_id: int) -> None:
    torch.set_num_threads(1)


def make_loader(
    dataset: RealPatchDataset,
    *,
    batch_size: int,
    start_step: int = 0,
    num_workers: int = 0,
) -> DataLoader:
    """Batches for steps ``start_step, start_step + 1, ...`` in order.

    Step ``t`` consumes dataset indices ``t * B`` to ``t * B + B - 1``.
    """

    indices = range(start_step * batch_size, len(dataset))
    return DataLoader(
        dataset,
        batch_size=batch_size,
        sampler=indices,
        shuffle=False,
        drop_last=True,
        num_workers=num_workers,
        collate_fn=collate_items,
        worker_init_fn=_seed_worker if num_workers > 0 else None,
        persistent_workers=False,
    )


def _histogram(sizes: Sequence[int]) -> dict[str, int]:
    bins: dict[int, int] = {}
    for size in sizes:
        k = int(np.floor(np.log2(size)))
        bins[k] = bins.get(k, 0) + 1
    return {f"{2**k}-{2 ** (k + 1) - 1}": bins[k] for k in sorted(bins)}


def dataset_stats(
    manifest: Manifest,
    policy: SamplingPolicy | None = None,
    n_draws: int = 10_000,
    seed: int = 0,
) -> DatasetReport:
    """Counts, native-size histogram and the Monte-Carlo mean sampled scale."""

    if n_draws < 1:
        raise ValueError(f"n_draws must be >= 1, got {n_draws}")
    pol = policy or SamplingPolicy.from_manifest(manifest)
    hr_sizes = [r.s_im for r in manifest.hr()]
    if pol.hr_sizes:
        rng = rng_stream(seed, "stats")
        scales = [sample_fake_spec(rng, pol).s for _ in range(n_draws)]
        expected = float(np.mean(scales))
    else:
        expected = float(manifest.p)
    return DatasetReport(
        p=manifest.p,
        count_lr=len(manifest.lr()),
        count_hr=len(hr_sizes),
        histogram=_histogram([r.s_im for r in manifest.records]),
        hr_min=min(hr_sizes) if hr_sizes else None,
        hr_median=float(np.median(hr_sizes)) if hr_sizes else None,
        hr_max=max(hr_sizes) if hr_sizes else None,
        expected_scale=expected,
        n_draws=n_draws,
    )
