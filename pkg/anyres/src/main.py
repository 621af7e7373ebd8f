"""Command-line entry point: ``python main.py <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple

import torch

from checkpoint import LoadedCheckpoint, load_checkpoint
from config import CorpusConfig, RuntimeConfig
from corpus import generate_corpus
from datapipe import SamplingPolicy, dataset_stats, ingest
from embedder import RandomConvEmbedder
from errors import CheckpointError, InvalidArgumentError, NumericalAbortError
from evaluate import (
    extrapolation_sweep,
    fid_at_res,
    fid_baseline,
    generated_global_images,
    latents,
    pfid,
    pfid_baseline,
    real_global_images,
    real_patch_set,
    spectrum_gap,
    spectrum_profile,
    write_spectrum,
)
from geometry import make_spec
from image_io import save_png
from models import EvalReport, Manifest, TrainConfig
from provenance import canonical_json, write_provenance
from trainer import LATEST, configure_torch, run_phase

LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

METRICS = ("pfid", "ds-pfid", "fid", "spectrum")

# Latent stream shared by ``sample`` and ``render`` so tiles and patches agree.
CLI_LATENT_STREAM = "cli-z"


def _center(value: str) -> Tuple[float, float]:
    parts = [part.strip() for part in value.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"center must be 'vx,vy', got {value!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"center must be numeric: {value!r}") from exc


def _scales(value: str) -> List[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"scales must be integers: {value!r}") from exc


def _split_rule(value: str) -> Optional[int]:
    """``p`` (default rule), ``threshold:N`` or a bare ``N``."""

    rule = value.strip().lower()
    if rule == "p":
        return None
    if rule.startswith("threshold:"):
        rule = rule.split(":", 1)[1]
    try:
        threshold = int(rule)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"unknown split rule: {value!r}") from exc
    if threshold < 1:
        raise argparse.ArgumentTypeError(f"threshold must be positive: {value!r}")
    return threshold


def load_train_config(
    path: Path | str | None,
    *,
    steps_field: str | None = None,
    steps: int | None = None,
    seed: int | None = None,
    teacher_weight: float | None = None,
) -> TrainConfig:
    """Read a JSON config and apply command-line overrides on top of it."""

    payload: dict[str, Any] = {}
    if path is not None:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(payload, dict):
            raise InvalidArgumentError(f"config {path} must hold a JSON object")
    overrides: dict[str, Any] = {}
    if steps is not None and steps_field is not None:
        overrides[steps_field] = steps
    if seed is not None:
        overrides["seed"] = seed
    if teacher_weight is not None:
        overrides["teacher_weight"] = teacher_weight
    return TrainConfig.model_validate({**payload, **overrides})


def _out_dir(args: argparse.Namespace, runtime: RuntimeConfig, command: str) -> Path:
    return Path(args.out) if args.out else Path(runtime.output_root) / command


def _print_json(payload: Any) -> None:
    print(json.dumps(json.loads(canonical_json(payload)), sort_keys=True, indent=2))


def _load_generator(
    args: argparse.Namespace, runtime: RuntimeConfig
) -> LoadedCheckpoint:
    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    loaded = load_checkpoint(args.checkpoint, runtime.device)
    loaded.generator.eval()
    return loaded


def _cli_latent(seed: int, z_dim: int, device: str) -> torch.Tensor:
    return latents(seed, CLI_LATENT_STREAM, 0, 1, z_dim)[0].to(device)


def cmd_corpus(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    defaults = CorpusConfig()
    config = dataclasses.replace(
        defaults,
        count=args.count if args.count is not None else defaults.count,
        min_size=args.min_size if args.min_size is not None else defaults.min_size,
        max_size=args.max_size if args.max_size is not None else defaults.max_size,
        seed=args.seed if args.seed is not None else defaults.seed,
    )
    if config.min_size < 1 or config.max_size < config.min_size:
        raise InvalidArgumentError(
            f"invalid size range [{config.min_size}, {config.max_size}]"
        )
    written = generate_corpus(
        args.out, config=config, corrupt=args.corrupt, square=args.square
    )
    print(f"{len(written)} files written to {args.out}")
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    manifest = ingest(args.dir, args.p, args.split_rule, args.out_manifest)
    write_provenance(
        Path(args.out_manifest).parent,
        "ingest",
        {"dir": str(args.dir), "p": args.p, "hr_threshold": args.split_rule},
    )
    print(
        f"{len(manifest.records)} records ({len(manifest.hr())} HR, "
        f"{len(manifest.lr())} LR, {manifest.skipped} skipped) -> {args.out_manifest}"
    )
    return EXIT_OK


def cmd_stats(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    config = load_train_config(args.config)
    manifest = Manifest.load(args.manifest, config.p)
    policy = SamplingPolicy.from_config(manifest, config)
    report = dataset_stats(manifest, policy, args.draws, args.seed)
    _print_json(report)
    return EXIT_OK


def _train(args: argparse.Namespace, runtime: RuntimeConfig, phase: int) -> int:
    command = "pretrain" if phase == 1 else "train-patches"
    config = load_train_config(
        args.config,
        steps_field="pretrain_steps" if phase == 1 else "patch_steps",
        steps=args.steps,
        seed=args.seed,
        teacher_weight=args.teacher_weight,
    )
    manifest = Manifest.load(args.manifest, config.p)
    out = _out_dir(args, runtime, command)
    init = getattr(args, "init_checkpoint", None)
    write_provenance(
        out,
        command,
        config,
        {"manifest": str(args.manifest), "init_checkpoint": init, "phase": phase},
    )
    trail = run_phase(
        config,
        manifest,
        phase,
        out,
        init_checkpoint=init,
        resume=args.resume,
        runtime=runtime,
    )
    _print_json(
        {"checkpoints": [str(path) for path in trail], "latest": str(out / LATEST)}
    )
    return EXIT_OK


def cmd_pretrain(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    return _train(args, runtime, phase=1)


def cmd_train_patches(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    return _train(args, runtime, phase=2)


@torch.no_grad()
def cmd_sample(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    loaded = _load_generator(args, runtime)
    generator = loaded.generator
    spec = make_spec(args.scale, args.center, generator.config.p)
    z = _cli_latent(args.seed, generator.config.z_dim, runtime.device)
    target = save_png(generator.synthesize_patch(z, spec).cpu(), args.out)
    write_provenance(
        target.parent,
        "sample",
        {
            "checkpoint": str(args.checkpoint),
            "seed": args.seed,
            "scale": args.scale,
            "center": list(args.center),
            "checkpoint_config_hash": loaded.meta.config_hash,
        },
    )
    print(str(target))
    return EXIT_OK


@torch.no_grad()
def cmd_render(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    loaded = _load_generator(args, runtime)
    generator = loaded.generator
    z = _cli_latent(args.seed, generator.config.z_dim, runtime.device)
    if args.monolithic:
        image = generator.synthesize_monolithic(z, args.res)
    else:
        image = generator.synthesize_image(z, args.res)
    target = save_png(image.cpu(), args.out)
    write_provenance(
        target.parent,
        "render",
        {
            "checkpoint": str(args.checkpoint),
            "seed": args.seed,
            "res": args.res,
            "monolithic": args.monolithic,
            "checkpoint_config_hash": loaded.meta.config_hash,
        },
    )
    print(str(target))
    return EXIT_OK


def _policy(loaded: LoadedCheckpoint, manifest: Manifest) -> SamplingPolicy:
    if loaded.meta.train_config is not None:
        return SamplingPolicy.from_config(manifest, loaded.meta.train_config)
    return SamplingPolicy.from_manifest(manifest)


def cmd_eval(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    loaded = _load_generator(args, runtime)
    generator = loaded.generator
    p = generator.config.p
    manifest = Manifest.load(args.manifest, p)
    embedder = RandomConvEmbedder()
    res = args.res or p
    extra: dict[str, Any] = {
        "checkpoint": str(args.checkpoint),
        "step": loaded.meta.step,
    }
    if args.metric in ("pfid", "ds-pfid"):
        n = args.n or 2048
        downsample = args.metric == "ds-pfid"
        policy = _policy(loaded, manifest)
        real = real_patch_set(manifest, embedder, n, args.seed, policy, downsample)
        value = pfid(
            manifest, generator, embedder, n, args.seed, policy, downsample, real=real
        )
        baseline = pfid_baseline(manifest, embedder, n, args.seed, policy, downsample)
    elif args.metric == "fid":
        n = args.n or 512
        value = fid_at_res(manifest, generator, res, embedder, n, args.seed)
        baseline = fid_baseline(manifest, res, embedder, n, args.seed)
        extra["res"] = res
    else:
        n = args.n or 64
        out = _out_dir(args, runtime, "eval")
        fake = spectrum_profile(generated_global_images(generator, res, n, args.seed))
        real = spectrum_profile(real_global_images(manifest, res, n, args.seed))
        other = spectrum_profile(
            real_global_images(manifest, res, n, args.seed, stream="fid-baseline")
        )
        for name, profile in (("generated", fake), ("real", real)):
            write_spectrum(
                profile, out / f"spectrum_{name}.csv", out / f"spectrum_{name}.png"
            )
        value = spectrum_gap(real, fake)
        baseline = spectrum_gap(real, other)
        extra.update(res=res, csv=str(out / "spectrum_generated.csv"))
    LOG.info("%s = %.4f (real-vs-real baseline %.4f)", args.metric, value, baseline)
    report = EvalReport(
        metric=args.metric,
        value=value,
        n=n,
        seed=args.seed,
        baseline=baseline,
        embedder_id=embedder.identifier,
        config_hash=loaded.meta.config_hash,
        extra=extra,
    )
    if args.out:
        out = Path(args.out)
        write_provenance(
            out, "eval", {"metric": args.metric, "n": n, "seed": args.seed}
        )
        (out / f"eval-{args.metric}.json").write_text(
            report.model_dump_json(indent=2) + "\n", encoding="utf-8"
        )
    _print_json(report)
    return EXIT_OK


def cmd_extrapolate(args: argparse.Namespace, runtime: RuntimeConfig) -> int:
    loaded = _load_generator(args, runtime)
    generator = loaded.generator
    out = _out_dir(args, runtime, "extrapolate")
    manifest = None
    expected_scale = None
    training_s_max = generator.config.s_max
    if args.manifest:
        manifest = Manifest.load(args.manifest, generator.config.p)
        policy = _policy(loaded, manifest)
        expected_scale = dataset_stats(manifest, policy, seed=args.seed).expected_scale
        training_s_max = policy.s_max or training_s_max
    z_set = latents(args.seed, "extrapolate", 0, args.latents, generator.config.z_dim)
    _, report = extrapolation_sweep(
        generator,
        z_set.to(runtime.device),
        args.scales,
        v=args.center,
        expected_scale=expected_scale,
        training_s_max=training_s_max,
        sheet_path=out / "extrapolation.png",
        manifest=manifest,
        embedder=RandomConvEmbedder() if manifest is not None else None,
        n_proxy=args.n_proxy,
        seed=args.seed,
    )
    write_provenance(
        out,
        "extrapolate",
        {
            "checkpoint": str(args.checkpoint),
            "scales": args.scales,
            "seed": args.seed,
            "checkpoint_config_hash": loaded.meta.config_hash,
        },
    )
    (out / "extrapolation.json").write_text(
        report.model_dump_json(indent=2) + "\n", encoding="utf-8"
    )
    _print_json(report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anyres", description="Any-resolution patch GAN toolkit."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="write a procedural multi-resolution corpus")
    corpus.add_argument("--out", required=True)
    corpus.add_argument("--count", type=int)
    corpus.add_argument("--min-size", type=int)
    corpus.add_argument("--max-size", type=int)
    corpus.add_argument("--seed", type=int)
    corpus.add_argument("--corrupt", type=int, default=0)
    corpus.add_argument("--square", action="store_true")
    corpus.set_defaults(handler=cmd_corpus)

    ing = sub.add_parser("ingest", help="index a directory into a manifest")
    ing.add_argument("--dir", required=True)
    ing.add_argument("--out-manifest", required=True)
    ing.add_argument("--p", type=int, default=32)
    ing.add_argument(
        "--split-rule",
        type=_split_rule,
        default=None,
        help="'p' or 'threshold:N'; images with min side >= N are HR",
    )
    ing.set_defaults(handler=cmd_ingest)

    stats = sub.add_parser("stats", help="dataset report with the mean sampled scale")
    stats.add_argument("--manifest", required=True)
    stats.add_argument("--config")
    stats.add_argument("--draws", type=int, default=10_000)
    stats.add_argument("--seed", type=int, default=0)
    stats.set_defaults(handler=cmd_stats)

    phases = (("pretrain", cmd_pretrain), ("train-patches", cmd_train_patches))
    for name, handler in phases:
        train = sub.add_parser(name, help=f"run the {name} phase")
        train.add_argument("--config")
        train.add_argument("--manifest", required=True)
        train.add_argument("--out")
        train.add_argument("--resume", action="store_true")
        train.add_argument("--steps", type=int)
        train.add_argument("--seed", type=int)
        train.add_argument("--teacher-weight", type=float)
        if name == "train-patches":
            train.add_argument("--init-checkpoint")
        train.set_defaults(handler=handler)

    sample = sub.add_parser("sample", help="render one p x p patch at (scale, center)")
    sample.add_argument("--checkpoint", required=True)
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument("--scale", type=int, required=True)
    sample.add_argument("--center", type=_center, default=(0.5, 0.5))
    sample.add_argument("--out", required=True)
    sample.set_defaults(handler=cmd_sample)

    render = sub.add_parser("render", help="render a full image from tiles")
    render.add_argument("--checkpoint", required=True)
    render.add_argument("--seed", type=int, default=0)
    render.add_argument("--res", type=int, required=True)
    render.add_argument("--monolithic", action="store_true")
    render.add_argument("--out", required=True)
    render.set_defaults(handler=cmd_render)

    ev = sub.add_parser("eval", help="pFID, ds-pFID, FID@res or spectrum report")
    ev.add_argument("--metric", choices=METRICS, required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--n", type=int)
    ev.add_argument("--res", type=int)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out")
    ev.set_defaults(handler=cmd_eval)

    ext = sub.add_parser("extrapolate", help="fixed-center sweep over scales")
    ext.add_argument("--checkpoint", required=True)
    ext.add_argument("--scales", type=_scales, required=True)
    ext.add_argument("--center", type=_center, default=(0.5, 0.5))
    ext.add_argument("--seed", type=int, default=0)
    ext.add_argument("--latents", type=int, default=4)
    ext.add_argument("--manifest")
    ext.add_argument("--n-proxy", type=int, default=0)
    ext.add_argument("--out")
    ext.set_defaults(handler=cmd_extrapolate)
    return parser


def configure_logging(runtime: RuntimeConfig) -> None:
    logging.basicConfig(
        level=getattr(logging, runtime.log_level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv: Sequence[str] | None = None) -> int:
    runtime = RuntimeConfig.from_env()
    configure_logging(runtime)
    args = build_parser().parse_args(argv)
    configure_torch(runtime)
    try:
        return args.handler(args, runtime)
    except NumericalAbortError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
