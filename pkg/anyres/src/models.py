"""Pydantic models shared by the any-resolution pipeline."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

# Slack for float round-off when checking the patch containment bound.
CONTAINMENT_EPS = 1e-9


class PatchSpec(BaseModel):
    """A p x p patch cut from the implicit s x s image, centered at v."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    s: int = Field(..., ge=1)
    v: Tuple[float, float]
    p: int = Field(..., ge=1)

    @model_validator(mode="after")
    def _check_bounds(self) -> "PatchSpec":
        if self.s < self.p:
            raise ValueError(f"scale s={self.s} is smaller than patch size p={self.p}")
        half = self.p / (2.0 * self.s)
        for axis, value in zip("xy", self.v):
            if value < half - CONTAINMENT_EPS or value > 1.0 - half + CONTAINMENT_EPS:
                raise ValueError(
                    f"center v_{axis}={value} leaves the domain: must lie in "
                    f"[{half}, {1.0 - half}] for s={self.s}, p={self.p}"
                )
        return self

    @classmethod
    def global_view(cls, p: int) -> "PatchSpec":
        return cls(s=p, v=(0.5, 0.5), p=p)

    @property
    def extent(self) -> float:
        """Side length of the patch in normalized units."""

        return self.p / self.s

    @property
    def is_global(self) -> bool:
        return self.s == self.p


class ImageRecord(BaseModel):
    """A dataset image kept at its native resolution."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    id: str
    path: str
    width: int = Field(..., ge=1)
    height: int = Field(..., ge=1)
    split: Literal["LR", "HR"] = "LR"

    @property
    def s_im(self) -> int:
        return min(self.width, self.height)


class Manifest(BaseModel):
    """Variable-resolution dataset index with LR/HR split tags."""

    model_config = ConfigDict(extra="forbid")

    records: List[ImageRecord]
    p: int = Field(..., ge=1)
    skipped: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_hr(self) -> "Manifest":
        for record in self.records:
            if record.split == "HR" and record.s_im < self.p:
                raise ValueError(
                    f"HR record {record.id} has s_im={record.s_im} < p={self.p}"
                )
        return self

    def hr(self) -> List[ImageRecord]:
        return [r for r in self.records if r.split == "HR"]

    def lr(self) -> List[ImageRecord]:
        return [r for r in self.records if r.split == "LR"]

    def by_id(self) -> Dict[str, ImageRecord]:
        return {r.id: r for r in self.records}

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "id": r.id,
                    "path": r.path,
                    "width": r.width,
                    "height": r.height,
                    "split": r.split,
                },
                sort_keys=True,
            )
            for r in self.records
        ]
        return "".join(line + "\n" for line in lines)

    def write(self, path: Path | str) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(self.to_jsonl().encode("utf-8"))
        return target

    @classmethod
    def load(cls, path: Path | str, p: int) -> "Manifest":
        records = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                records.append(ImageRecord.model_validate_json(line))
        return cls(records=records, p=p)


class TrainConfig(BaseModel):
    """Flat training configuration; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    p: int = Field(32, ge=8)
    s_lo: Optional[int] = Field(None, ge=1)
    s_hi: Optional[int] = Field(None, ge=1)
    s_max: Optional[int] = Field(None, ge=2)
    r1_gamma: float = Field(1.0, ge=0)
    r1_interval: int = Field(4, ge=1)
    teacher_weight: float = Field(5.0, ge=0)
    teacher_mode: Literal["inverse", "forward"] = "inverse"
    global_prob: float = Field(0.5, ge=0, le=1)
    batch_size: int = Field(8, ge=1)
    lr_g: float = Field(2.5e-3, gt=0)
    lr_d: float = Field(2.5e-3, gt=0)
    betas: Tuple[float, float] = (0.0, 0.99)
    pretrain_steps: int = Field(1000, ge=0)
    patch_steps: int = Field(1000, ge=0)
    seed: int = Field(0, ge=0)
    w_l1: float = Field(1.0, ge=0)
    w_perc: float = Field(1.0, ge=0)

    z_dim: int = Field(64, ge=1)
    w_dim: int = Field(128, ge=1)
    mapping_layers: int = Field(2, ge=1)
    fourier_channels: int = Field(64, ge=1)
    fourier_bandwidth: float = Field(8.0, gt=0)
    num_layers: int = Field(6, ge=1)
    channels: int = Field(128, ge=1)
    kernel_size: Literal[1, 3] = 1
    scale_conditioning: bool = True
    coordinate_mapping: Literal["planar", "cylindrical"] = "planar"
    d_channels: int = Field(64, ge=1)

    log_every: int = Field(50, ge=1)
    snapshot_every: int = Field(500, ge=1)
    eval_every: int = Field(500, ge=1)
    sample_every: int = Field(500, ge=1)
    proxy_pfid_n: int = Field(256, ge=2)
    num_workers: int = Field(0, ge=0)
    log_wallclock: bool = True

    @model_validator(mode="after")
    def _check_ranges(self) -> "TrainConfig":
        if self.s_lo is not None and self.s_lo < self.p:
            raise ValueError(f"s_lo={self.s_lo} must be >= p={self.p}")
        lo = self.s_lo or self.p
        if self.s_hi is not None and self.s_hi < lo:
            raise ValueError(f"s_hi={self.s_hi} must be >= s_lo={lo}")
        if self.s_max is not None and self.s_max <= self.p:
            raise ValueError(f"s_max={self.s_max} must exceed p={self.p}")
        for beta in self.betas:
            if not 0.0 <= beta < 1.0:
                raise ValueError(f"optimizer beta {beta} outside [0, 1)")
        return self

    def generator_config(self, s_max: int) -> "GeneratorConfig":
        return GeneratorConfig(
            p=self.p,
            s_max=s_max,
            z_dim=self.z_dim,
            w_dim=self.w_dim,
            mapping_layers=self.mapping_layers,
            fourier_channels=self.fourier_channels,
            fourier_bandwidth=self.fourier_bandwidth,
            num_layers=self.num_layers,
            channels=self.channels,
            kernel_size=self.kernel_size,
            scale_conditioning=self.scale_conditioning,
            coordinate_mapping=self.coordinate_mapping,
            d_channels=self.d_channels,
            seed=self.seed,
        )


class GeneratorConfig(BaseModel):
    """Architecture of the generator/discriminator pair."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    p: int = Field(32, ge=4)
    s_max: int = Field(64, ge=2)
    z_dim: int = Field(64, ge=1)
    w_dim: int = Field(128, ge=1)
    mapping_layers: int = Field(2, ge=1)
    fourier_channels: int = Field(64, ge=1)
    fourier_bandwidth: float = Field(8.0, gt=0)
    num_layers: int = Field(6, ge=1)
    channels: int = Field(128, ge=1)
    kernel_size: Literal[1, 3] = 1
    scale_conditioning: bool = True
    coordinate_mapping: Literal["planar", "cylindrical"] = "planar"
    d_channels: int = Field(64, ge=1)
    seed: int = Field(0, ge=0)

    @property
    def margin(self) -> int:
        """Pixels of context each side consumed by the valid convolutions."""

        return self.num_layers * (self.kernel_size // 2)


class CheckpointMeta(BaseModel):
    model_config = ConfigDict(extra="forbid")

    phase: Literal[1, 2]
    step: int = Field(0, ge=0)
    seed: int = 0
    config_hash: str = ""
    code_hash: str = ""
    generator: GeneratorConfig
    train_config: Optional[TrainConfig] = None
    best_proxy: Optional[float] = None


class MetricRow(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step: int
    loss_D: Optional[float] = None
    loss_G: Optional[float] = None
    r1: Optional[float] = None
    teacher: Optional[float] = None
    proxy_pfid: Optional[float] = None
    wallclock: Optional[float] = None


class EvalReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    metric: str
    value: Optional[float]
    n: int
    seed: int
    baseline: Optional[float] = None
    embedder_id: str
    config_hash: str = ""
    extra: Dict[str, object] = Field(default_factory=dict)


class DatasetReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    p: int
    count_lr: int
    count_hr: int
    histogram: Dict[str, int]
    hr_min: Optional[int] = None
    hr_median: Optional[float] = None
    hr_max: Optional[int] = None
    expected_scale: float
    n_draws: int


class SweepEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    s: int
    v: Tuple[float, float]
    zoom: float
    above_expected_scale: bool
    above_training_max: bool
    proxy_pfid: Optional[float] = None


class SweepReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    entries: List[SweepEntry]
    expected_scale: Optional[float] = None
    training_s_max: int
    seed: int
    sheet_path: Optional[str] = None
