"""Long desk-scale acceptance runs: smoke, teacher ablation, extrapolation, determinism.

Usage::

    python anyres/scripts/acceptance_runs.py smoke --out runs/acceptance
    python anyres/scripts/acceptance_runs.py all --steps 2000

Each run writes ``<out>/<run>/summary.json`` and logs a PASS/FAIL line.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Dict, List, Tuple

SRC_DIR = Path(__file__).resolve().parents[1] / "src"
sys.path.insert(0, str(SRC_DIR))

import torch  # noqa: E402

from checkpoint import load_checkpoint  # noqa: E402
from config import CorpusConfig, RuntimeConfig  # noqa: E402
from corpus import generate_corpus  # noqa: E402
from datapipe import ingest  # noqa: E402
from embedder import RandomConvEmbedder  # noqa: E402
from evaluate import latents, pfid_at_scale, pfid_baseline  # noqa: E402
from models import Manifest, PatchSpec, TrainConfig  # noqa: E402
from trainer import LATEST, METRICS_FILE, configure_torch, run_phase  # noqa: E402

LOG = logging.getLogger("acceptance")

P = 64
DRIFT_LATENTS = 64


def prepare_corpus(out: Path, max_size: int = 256, seed: int = 0) -> Manifest:
    corpus_dir = out / "corpus"
    config = CorpusConfig(count=64, min_size=P, max_size=max_size, seed=seed)
    generate_corpus(corpus_dir, config=config)
    return ingest(corpus_dir, P, None, out / "manifest.jsonl")


def train_config(steps: int, seed: int, **overrides) -> TrainConfig:
    payload = {
        "p": P,
        "pretrain_steps": steps,
        "patch_steps": steps,
        "seed": seed,
        "eval_every": max(steps // 10, 1),
        "snapshot_every": max(steps // 5, 1),
        "sample_every": max(steps // 5, 1),
        "log_every": max(steps // 100, 1),
        "proxy_pfid_n": 256,
        "log_wallclock": False,
    }
    payload.update(overrides)
    return TrainConfig.model_validate(payload)


def two_phase(
    config: TrainConfig, manifest: Manifest, out: Path, phase1: Path | None = None
) -> Path:
    """Run both phases and return the phase-2 directory.

    ``phase1`` reuses an existing phase-1 directory instead of training one.
    """

    if phase1 is None:
        phase1 = out / "phase1"
        run_phase(config, manifest, 1, phase1)
    phase2 = out / "phase2"
    run_phase(config, manifest, 2, phase2, init_checkpoint=phase1 / LATEST)
    return phase2


def proxy_curve(run_dir: Path) -> List[Tuple[int, float]]:
    with (run_dir / METRICS_FILE).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["step"]), float(r["proxy_pfid"])) for r in rows if r["proxy_pfid"]]


@torch.no_grad()
def global_drift(checkpoint_path: Path, seed: int) -> float:
    """Mean L1 between the student's and the teacher's global views."""

    loaded = load_checkpoint(checkpoint_path)
    if loaded.teacher is None:
        raise ValueError(f"{checkpoint_path} has no teacher")
    p = loaded.meta.generator.p
    z = latents(seed, "drift", 0, DRIFT_LATENTS, loaded.meta.generator.z_dim)
    specs = [PatchSpec.global_view(p)] * DRIFT_LATENTS
    student = loaded.generator.eval()(z, specs)
    teacher = loaded.teacher.eval()(z, specs)
    return float((student - teacher).abs().mean())


def _write_summary(out: Path, name: str, summary: Dict) -> Dict:
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    LOG.info("%s: %s", name, "PASS" if summary["passed"] else "FAIL")
    return summary


def run_smoke(out: Path, steps: int, seed: int) -> Dict:
    manifest = prepare_corpus(out)
    phase2 = two_phase(train_config(steps, seed), manifest, out)
    curve = proxy_curve(phase2)
    start, end = curve[0][1], curve[-1][1]
    baseline = pfid_baseline(manifest, RandomConvEmbedder(), 256, seed)
    return _write_summary(
        out,
        "smoke",
        {
            "proxy_pfid_start": start,
            "proxy_pfid_end": end,
            "split_half_baseline": baseline,
            "passed": end <= 0.5 * start,
        },
    )


def run_ablation(out: Path, steps: int, seed: int) -> Dict:
    manifest = prepare_corpus(out)
    shared = out / "phase1"
    run_phase(train_config(steps, seed), manifest, 1, shared)
    results = {}
    for weight in (0.0, 5.0):
        run_dir = out / f"teacher-{weight:g}"
        config = train_config(steps, seed, teacher_weight=weight)
        phase2 = two_phase(config, manifest, run_dir, phase1=shared)
        results[weight] = {
            "drift": global_drift(phase2 / LATEST, seed),
            "proxy_pfid": proxy_curve(phase2)[-1][1],
        }
    lower_drift = results[5.0]["drift"] < results[0.0]["drift"]
    lower_pfid = results[0.0]["proxy_pfid"] < results[5.0]["proxy_pfid"]
    return _write_summary(
        out,
        "ablation",
        {
            "runs": {f"{weight:g}": values for weight, values in results.items()},
            "teacher_reduces_drift": lower_drift,
            "no_teacher_lowers_pfid": lower_pfid,
            "passed": lower_drift and lower_pfid,
        },
    )


def run_extrapolation(out: Path, steps: int, seed: int) -> Dict:
    # 4p must be supported by real data even though training stops at 2p.
    manifest = prepare_corpus(out, max_size=5 * P)
    config = train_config(steps, seed, s_hi=2 * P)
    phase2 = two_phase(config, manifest, out)
    generator = load_checkpoint(phase2 / LATEST).generator.eval()
    embedder = RandomConvEmbedder()
    values = {
        scale: pfid_at_scale(manifest, generator, embedder, scale, 256, seed)
        for scale in (P, 2 * P, 4 * P)
    }
    finite = all(v is not None and math.isfinite(v) for v in values.values())
    degrades = finite and values[4 * P] > values[2 * P]
    return _write_summary(
        out,
        "extrapolation",
        {
            "proxy_pfid": {str(k): v for k, v in values.items()},
            "training_s_hi": 2 * P,
            "finite": finite,
            "degrades_beyond_training_range": degrades,
            "passed": degrades,
        },
    )


def run_determinism(out: Path, steps: int, seed: int) -> Dict:
    dirs = []
    for name in ("a", "b"):
        run_dir = out / name
        manifest = prepare_corpus(run_dir)
        two_phase(train_config(steps, seed), manifest, run_dir)
        dirs.append(run_dir)
    checks = {}
    for phase in ("phase1", "phase2"):
        for artifact in (METRICS_FILE, LATEST):
            first, second = (d / phase / artifact for d in dirs)
            checks[f"{phase}/{artifact}"] = first.read_bytes() == second.read_bytes()
    return _write_summary(
        out,
        "determinism",
        {"identical": checks, "passed": all(checks.values())},
    )


RUNS = {
    "smoke": run_smoke,
    "ablation": run_ablation,
    "extrapolation": run_extrapolation,
    "determinism": run_determinism,
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("run", choices=[*RUNS, "all"])
    parser.add_argument("--out", default="runs/acceptance")
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    runtime = RuntimeConfig.from_env()
    logging.basicConfig(
        level=getattr(logging, runtime.log_level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    configure_torch(runtime)
    names = list(RUNS) if args.run == "all" else [args.run]
    failed = []
    for name in names:
        summary = RUNS[name](Path(args.out) / name, args.steps, args.seed)
        if not summary["passed"]:
            failed.append(name)
    if failed:
        raise SystemExit(f"failed acceptance runs: {', '.join(failed)}")


if __name__ == "__main__":
    main()
