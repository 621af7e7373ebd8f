"""Two-phase training: fixed-scale pretraining, then mixed-scale patch training."""

from __future__ import annotations

import copy
import csv
import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import torch

from checkpoint import load_checkpoint, save_checkpoint
from config import RuntimeConfig
from datapipe import (
    PatchBatch,
    RealPatchDataset,
    SamplingPolicy,
    make_loader,
)
from embedder import RandomConvEmbedder
from errors import CheckpointError, InvalidArgumentError, NumericalAbortError
from evaluate import (
    extrapolation_sweep,
    fid_at_res,
    image_stats,
    latents,
    pfid,
    real_global_images,
    real_patch_set,
)
from losses import (
    RandomConvPerceptual,
    generator_loss,
    nonsat_losses,
    r1_penalty,
    teacher_loss_batch,
)
from models import CheckpointMeta, Manifest, MetricRow, PatchSpec, TrainConfig
from netcore import Discriminator, Generator, build_networks
from provenance import code_hash, config_hash

LOG = logging.getLogger(__name__)

LATEST = "latest.ckpt"
BEST = "best.ckpt"
METRICS_FILE = "metrics.csv"


@dataclass
class StepMetrics:
    loss_d: float
    loss_g: float
    r1: Optional[float] = None
    teacher: Optional[float] = None


@dataclass
class TrainState:
    config: TrainConfig
    phase: int
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    policy: SamplingPolicy
    step: int = 0
    teacher: Optional[Generator] = None
    teacher_fingerprint: Optional[str] = None
    perceptual: Optional[RandomConvPerceptual] = None
    last: Optional[StepMetrics] = None
    best_proxy: Optional[float] = None
    history: List[MetricRow] = field(default_factory=list)


def parameter_fingerprint(module: torch.nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().to("cpu").contiguous().numpy().tobytes())
    return digest.hexdigest()


def resolve_s_max(config: TrainConfig, policy: SamplingPolicy) -> int:
    """Configured ``s_max``, else the largest scale the sampler can emit."""

    if config.s_max is not None:
        return config.s_max
    largest = policy.s_max
    if largest is None or largest <= config.p:
        return 2 * config.p
    return largest


def _optimizers(
    config: TrainConfig, generator: Generator, discriminator: Discriminator
) -> tuple[torch.optim.Adam, torch.optim.Adam]:
    opt_g = torch.optim.Adam(
        generator.parameters(), lr=config.lr_g, betas=config.betas
    )
    opt_d = torch.optim.Adam(
        discriminator.parameters(), lr=config.lr_d, betas=config.betas
    )
    return opt_g, opt_d


def init_state(config: TrainConfig, manifest: Manifest) -> TrainState:
    """Fresh phase-1 state; the generator's ``s_max`` is fixed here for both phases."""

    if manifest.p != config.p:
        raise InvalidArgumentError(
            f"manifest was built for p={manifest.p}, config has p={config.p}"
        )
    policy = SamplingPolicy.from_config(manifest, config)
    generator, discriminator = build_networks(
        config.generator_config(resolve_s_max(config, policy))
    )
    opt_g, opt_d = _optimizers(config, generator, discriminator)
    return TrainState(
        config=config,
        phase=1,
        generator=generator,
        discriminator=discriminator,
        opt_g=opt_g,
        opt_d=opt_d,
        policy=policy,
    )


def start_patch_phase(
    config: TrainConfig,
    manifest: Manifest,
    generator: Generator,
    discriminator: Discriminator,
) -> TrainState:
    """Phase-2 state: G and D carried over, teacher frozen, scale branch enabled."""

    teacher = copy.deepcopy(generator).eval()
    teacher.requires_grad_(False)
    generator.reset_scale_branch()
    generator.set_scale_trainable(True)
    opt_g, opt_d = _optimizers(config, generator, discriminator)
    return TrainState(
        config=config,
        phase=2,
        generator=generator,
        discriminator=discriminator,
        opt_g=opt_g,
        opt_d=opt_d,
        policy=SamplingPolicy.from_config(manifest, config),
        teacher=teacher,
        teacher_fingerprint=parameter_fingerprint(teacher),
        perceptual=RandomConvPerceptual(seed=config.seed),
    )


def _check_finite(step: int, term: str, value: torch.Tensor) -> float:
    number = float(value.detach())
    if not math.isfinite(number):
        raise NumericalAbortError(step, term, number)
    return number


def _check_grads(step: int, term: str, module: torch.nn.Module) -> None:
    for name, param in module.named_parameters():
        if param.grad is not None and not torch.isfinite(param.grad).all():
            raise NumericalAbortError(step, f"{term} gradient ({name})", float("nan"))


def _global_specs(state: TrainState, count: int) -> List[PatchSpec]:
    return [PatchSpec.global_view(state.config.p)] * count


def _latents(state: TrainState, name: str, count: int) -> torch.Tensor:
    cfg = state.config
    device = next(state.generator.parameters()).device
    z = latents(cfg.seed, name, state.step * cfg.batch_size, count, cfg.z_dim)
    return z.to(device)


def _discriminator_step(
    state: TrainState, real: torch.Tensor, specs: Sequence[PatchSpec]
) -> tuple[float, Optional[float]]:
    """Fakes are synthesized at ``specs``, the (s, v) of the real batch."""

    cfg = state.config
    G, D = state.generator, state.discriminator
    with torch.no_grad():
        fake = G(_latents(state, "z-d", len(specs)), specs)
    loss_d, _ = nonsat_losses(D(real), D(fake))
    loss_d = loss_d.mean()
    total = loss_d
    r1_value = None
    if cfg.r1_gamma > 0 and state.step % cfg.r1_interval == 0:
        penalty = r1_penalty(D, real)
        r1_value = _check_finite(state.step, "r1", penalty)
        total = total + penalty * (cfg.r1_gamma / 2) * cfg.r1_interval
    value = _check_finite(state.step, "loss_D", loss_d)
    state.opt_d.zero_grad(set_to_none=True)
    total.backward()
    _check_grads(state.step, "D", D)
    state.opt_d.step()
    return value, r1_value


def _generator_step(
    state: TrainState, specs: Sequence[PatchSpec]
) -> tuple[float, Optional[float]]:
    cfg = state.config
    G, D = state.generator, state.discriminator
    z = _latents(state, "z-g", len(specs))
    D.requires_grad_(False)
    try:
        patches = G(z, specs)
        loss_g = generator_loss(D(patches)).mean()
        total = loss_g
        teacher_value = None
        if state.teacher is not None:
            with torch.no_grad():
                bases = state.teacher(z, [PatchSpec.global_view(cfg.p)] * len(specs))
            term = teacher_loss_batch(
                patches,
                specs,
                bases,
                cfg.w_l1,
                cfg.w_perc,
                state.perceptual,
                cfg.teacher_mode,
            )
            teacher_value = _check_finite(state.step, "teacher", term)
            if cfg.teacher_weight > 0:
                total = total + cfg.teacher_weight * term
        value = _check_finite(state.step, "loss_G", loss_g)
        state.opt_g.zero_grad(set_to_none=True)
        total.backward()
        _check_grads(state.step, "G", G)
        state.opt_g.step()
    finally:
        D.requires_grad_(True)
    return value, teacher_value


def pretrain_step(state: TrainState, real_batch: torch.Tensor) -> TrainState:
    """One D step (lazy R1) and one G step at the global spec."""

    if state.phase != 1:
        raise InvalidArgumentError("pretrain_step requires a phase-1 state")
    specs = _global_specs(state, real_batch.shape[0])
    loss_d, r1 = _discriminator_step(state, real_batch, specs)
    loss_g, _ = _generator_step(state, specs)
    state.last = StepMetrics(loss_d=loss_d, loss_g=loss_g, r1=r1)
    state.step += 1
    return state


def patch_train_step(state: TrainState, real_patch_batch: PatchBatch) -> TrainState:
    """Mixed-scale step: adversarial patch loss plus the weighted teacher term."""

    if state.phase != 2 or state.teacher is None:
        raise InvalidArgumentError("patch_train_step requires a phase-2 state")
    if parameter_fingerprint(state.teacher) != state.teacher_fingerprint:
        raise RuntimeError(f"teacher parameters changed before step {state.step}")
    device = next(state.generator.parameters()).device
    specs = list(real_patch_batch.specs)
    pixels = real_patch_batch.pixels.to(device)
    loss_d, r1 = _discriminator_step(state, pixels, specs)
    loss_g, teacher = _generator_step(state, specs)
    state.last = StepMetrics(loss_d=loss_d, loss_g=loss_g, r1=r1, teacher=teacher)
    state.step += 1
    return state


class ProxyMetric:
    """Phase 1 tracks FID at p; phase 2 tracks pFID. Real statistics are cached."""

    def __init__(self, state: TrainState, manifest: Manifest) -> None:
        cfg = state.config
        self.phase = state.phase
        self.manifest = manifest
        self.embedder = RandomConvEmbedder(seed=cfg.seed)
        self.n = cfg.proxy_pfid_n
        self.seed = cfg.seed
        self.policy = state.policy
        self._real = None

    def __call__(self, generator: Generator) -> float:
        if self.phase == 1:
            if self._real is None:
                images = real_global_images(
                    self.manifest, self.manifest.p, self.n, self.seed
                )
                self._real = image_stats(images, self.embedder)
            return fid_at_res(
                self.manifest,
                generator,
                self.manifest.p,
                self.embedder,
                self.n,
                self.seed,
                real_stats=self._real,
            )
        if self._real is None:
            self._real = real_patch_set(
                self.manifest, self.embedder, self.n, self.seed, self.policy
            )
        return pfid(
            self.manifest,
            generator,
            self.embedder,
            self.n,
            self.seed,
            self.policy,
            real=self._real,
        )


class MetricLog:
    """Append-only CSV of logged steps; reopening drops rows past ``keep_until``."""

    def __init__(self, path: Path, wallclock: bool, keep_until: Optional[int] = None):
        self.path = path
        self.columns = ["step", "loss_D", "loss_G", "r1", "teacher", "proxy_pfid"]
        if wallclock:
            self.columns.append("wallclock")
        kept: List[dict] = []
        if keep_until is not None and path.exists():
            with path.open(newline="", encoding="utf-8") as handle:
                kept = [
                    row
                    for row in csv.DictReader(handle)
                    if int(row["step"]) <= keep_until
                ]
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(
                handle, fieldnames=self.columns, extrasaction="ignore"
            )
            writer.writeheader()
            writer.writerows(kept)

    @staticmethod
    def _fmt(value: Optional[float]) -> str:
        return "" if value is None else f"{value:.8g}"

    def append(self, row: MetricRow) -> None:
        values = row.model_dump()
        line = {
            key: values[key] if key == "step" else self._fmt(values.get(key))
            for key in self.columns
        }
        with self.path.open("a", newline="", encoding="utf-8") as handle:
            csv.DictWriter(handle, fieldnames=self.columns).writerow(line)


def _meta(state: TrainState) -> CheckpointMeta:
    return CheckpointMeta(
        phase=state.phase,
        step=state.step,
        seed=state.config.seed,
        config_hash=config_hash(state.config),
        code_hash=code_hash(),
        generator=state.generator.config,
        train_config=state.config,
        best_proxy=state.best_proxy,
    )


def save_state(state: TrainState, path: Path) -> Path:
    return save_checkpoint(
        path,
        _meta(state),
        state.generator,
        state.discriminator,
        state.teacher,
        {"G": state.opt_g.state_dict(), "D": state.opt_d.state_dict()},
    )


def restore_state(path: Path, config: TrainConfig, manifest: Manifest) -> TrainState:
    """Rebuild a state from a checkpoint written by ``save_state``."""

    loaded = load_checkpoint(path)
    meta = loaded.meta
    generator, discriminator = loaded.generator, loaded.discriminator
    generator.set_scale_trainable(meta.phase == 2)
    opt_g, opt_d = _optimizers(config, generator, discriminator)
    if "G" in loaded.optimizer_states:
        opt_g.load_state_dict(loaded.optimizer_states["G"])
        opt_d.load_state_dict(loaded.optimizer_states["D"])
    teacher = loaded.teacher
    if meta.phase == 2 and teacher is None:
        raise CheckpointError(f"phase-2 checkpoint {path} has no teacher")
    return TrainState(
        config=config,
        phase=meta.phase,
        generator=generator,
        discriminator=discriminator,
        opt_g=opt_g,
        opt_d=opt_d,
        policy=SamplingPolicy.from_config(manifest, config),
        step=meta.step,
        teacher=teacher,
        teacher_fingerprint=(
            parameter_fingerprint(teacher) if teacher is not None else None
        ),
        perceptual=RandomConvPerceptual(seed=config.seed) if meta.phase == 2 else None,
        best_proxy=meta.best_proxy,
    )


def _sample_sheet(state: TrainState, path: Path) -> None:
    p = state.config.p
    scales: Sequence[int] = [p] if state.phase == 1 else [p, 2 * p, 4 * p]
    z = latents(state.config.seed, "samples", 0, 4, state.config.z_dim)
    extrapolation_sweep(
        state.generator, z, scales, sheet_path=path, seed=state.config.seed
    )


def configure_torch(runtime: RuntimeConfig) -> None:
    torch.use_deterministic_algorithms(True)
    if runtime.num_threads > 0:
        torch.set_num_threads(runtime.num_threads)


def run_phase(
    config: TrainConfig,
    manifest: Manifest,
    phase: int,
    out_dir: Path | str,
    init_checkpoint: Path | str | None = None,
    resume: bool = False,
    runtime: RuntimeConfig | None = None,
) -> List[Path]:
    """Run one training phase and return the checkpoints it wrote.

    Phase 2 starts from ``init_checkpoint`` (a phase-1 checkpoint) unless
    ``resume`` finds ``latest.ckpt`` in ``out_dir``.
    """

    rt = runtime or RuntimeConfig.from_env()
    configure_torch(rt)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    latest = out / LATEST
    if phase not in (1, 2):
        raise InvalidArgumentError(f"phase must be 1 or 2, got {phase}")

    resumed = resume and latest.exists()
    if resumed:
        state = restore_state(latest, config, manifest)
        if state.phase != phase:
            raise CheckpointError(
                f"{latest} belongs to phase {state.phase}, not {phase}"
            )
        LOG.info("Resuming phase %d at step %d from %s", phase, state.step, latest)
    elif phase == 1:
        state = init_state(config, manifest)
    else:
        if init_checkpoint is None:
            raise InvalidArgumentError("patch training needs a phase-1 init checkpoint")
        if not Path(init_checkpoint).exists():
            raise FileNotFoundError(f"init checkpoint not found: {init_checkpoint}")
        loaded = load_checkpoint(init_checkpoint)
        if loaded.meta.phase != 1:
            raise CheckpointError(f"{init_checkpoint} is not a phase-1 checkpoint")
        state = start_patch_phase(
            config, manifest, loaded.generator, loaded.discriminator
        )
        probe = latents(config.seed, "transition", 0, 1, config.z_dim)
        with torch.no_grad():
            spec = [PatchSpec.global_view(config.p)]
            same = torch.equal(state.generator(probe, spec), state.teacher(probe, spec))
        LOG.info("Phase transition: global view matches teacher bit-for-bit: %s", same)

    total = config.pretrain_steps if phase == 1 else config.patch_steps
    if phase == 1:
        # pretraining sees only global views
        state.policy = state.policy.with_global_prob(1.0)
    metric_log = MetricLog(
        out / METRICS_FILE,
        config.log_wallclock,
        keep_until=state.step if resumed else None,
    )
    proxy = ProxyMetric(state, manifest)
    trail: List[Path] = []
    started = time.perf_counter()

    def record(proxy_value: Optional[float]) -> None:
        last = state.last
        row = MetricRow(
            step=state.step,
            loss_D=last.loss_d if last else None,
            loss_G=last.loss_g if last else None,
            r1=last.r1 if last else None,
            teacher=last.teacher if last else None,
            proxy_pfid=proxy_value,
            wallclock=time.perf_counter() - started if config.log_wallclock else None,
        )
        state.history.append(row)
        metric_log.append(row)

    def snapshot() -> None:
        path = save_state(state, out / f"step-{state.step:06d}.ckpt")
        save_state(state, latest)
        trail.append(path)

    if not resumed:
        initial = proxy(state.generator)
        LOG.info("Phase %d initial proxy metric: %.4f", phase, initial)
        record(initial)

    dataset = RealPatchDataset(
        manifest,
        state.policy,
        config.seed,
        length=total * config.batch_size,
        stream=f"real-phase{phase}",
    )
    loader = make_loader(
        dataset,
        batch_size=config.batch_size,
        start_step=state.step,
        num_workers=config.num_workers,
    )
    device = next(state.generator.parameters()).device
    for batch in loader:
        if phase == 1:
            pretrain_step(state, batch.pixels.to(device))
        else:
            patch_train_step(state, batch)
        step = state.step
        last_step = step == total
        proxy_value = None
        if step % config.eval_every == 0 or last_step:
            proxy_value = proxy(state.generator)
            improved = state.best_proxy is None or proxy_value < state.best_proxy
            if phase == 1 and improved:
                state.best_proxy = proxy_value
                save_state(state, out / BEST)
                LOG.info("New best proxy FID %.4f at step %d", proxy_value, step)
        if step % config.log_every == 0 or proxy_value is not None:
            record(proxy_value)
            LOG.info(
                "phase=%d step=%d loss_D=%.4f loss_G=%.4f r1=%s teacher=%s",
                phase,
                step,
                state.last.loss_d,
                state.last.loss_g,
                state.last.r1,
                state.last.teacher,
            )
        if step % config.sample_every == 0 or last_step:
            _sample_sheet(state, out / f"samples-{step:06d}.png")
        if step % config.snapshot_every == 0 or last_step:
            snapshot()
    if state.step == 0 or not trail:
        snapshot()
    LOG.info(
        "Phase %d finished at step %d; %d checkpoints", phase, state.step, len(trail)
    )
    return trail
