"""Config and code hashes recorded next to every artifact."""

from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping

from pydantic import BaseModel

SRC_DIR = Path(__file__).resolve().parent


def canonical_json(payload: Any) -> str:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(payload: Any) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()[:16]


@lru_cache(maxsize=4)
def code_hash(src_dir: Path = SRC_DIR) -> str:
    """Git-style content hash over the package sources.

    Each file is hashed as a git blob; the result hashes the sorted
    ``name blob-id`` listing.
    """

    lines = []
    for path in sorted(src_dir.glob("*.py")):
        data = path.read_bytes()
        blob = hashlib.sha1(b"blob %d\x00" % len(data) + data).hexdigest()
        lines.append(f"{path.name} {blob}")
    return hashlib.sha1("\n".join(lines).encode("utf-8")).hexdigest()


def write_provenance(
    out_dir: Path | str,
    command: str,
    config: Any,
    extra: Mapping[str, Any] | None = None,
) -> Path:
    """Write ``config.json`` and ``provenance.json`` into ``out_dir``."""

    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    resolved = config
    if isinstance(config, BaseModel):
        resolved = config.model_dump(mode="json")
    (root / "config.json").write_text(
        json.dumps(resolved, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    record = {
        "command": command,
        "config_hash": config_hash(resolved),
        "code_hash": code_hash(),
        **dict(extra or {}),
    }
    target = root / "provenance.json"
    target.write_text(
        json.dumps(record, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return target
