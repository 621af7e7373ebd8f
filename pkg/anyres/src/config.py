"""Runtime configuration for the any-resolution toolkit."""

from __future__ import annotations

import os
from dataclasses import dataclass


@dataclass(frozen=True)
class RuntimeConfig:
    """Process-level settings loaded from environment variables."""

    output_root: str = "runs"
    device: str = "cpu"
    num_threads: int = 0
    log_level: str = "INFO"
    lanczos_a: int = 3

    @classmethod
    def from_env(cls) -> "RuntimeConfig":
        """Create config from environment variables when provided."""

        return cls(
            output_root=os.getenv("ANYRES_OUTPUT_ROOT", cls.output_root),
            device=os.getenv("ANYRES_DEVICE", cls.device),
            num_threads=int(os.getenv("ANYRES_NUM_THREADS", cls.num_threads)),
            log_level=os.getenv("ANYRES_LOG_LEVEL", cls.log_level).upper(),
            lanczos_a=int(os.getenv("ANYRES_LANCZOS_A", cls.lanczos_a)),
        )


@dataclass(frozen=True)
class CorpusConfig:
    """Defaults for the procedural corpus generator."""

    count: int = int(os.getenv("ANYRES_CORPUS_COUNT", "64"))
    min_size: int = int(os.getenv("ANYRES_CORPUS_MIN_SIZE", "64"))
    max_size: int = int(os.getenv("ANYRES_CORPUS_MAX_SIZE", "256"))
    seed: int = int(os.getenv("ANYRES_CORPUS_SEED", "0"))
