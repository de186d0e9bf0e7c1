"""Run manifest: every artifact a pipeline run emits, with content digests.

The manifest is itself JSON in the output directory.  Entries carry a
``deterministic`` flag; files holding wall-clock measurements are
flagged false so digest comparisons between reruns can skip them.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

from ..errors import ContractViolationError

MANIFEST_NAME = "manifest.json"


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


class RunManifest:
    """Mutable view of <output_dir>/manifest.json."""

    def __init__(self, output_dir: str | Path, config_digest: str, base_seed: int):
        self.output_dir = Path(output_dir)
        self.data = {
            "config_digest": config_digest,
            "base_seed": int(base_seed),
            "created_utc": datetime.now(timezone.utc).isoformat(),
            "artifacts": {},
            "wall_clock_s": {},
        }

    @property
    def path(self) -> Path:
        return self.output_dir / MANIFEST_NAME

    @classmethod
    def open(
        cls, output_dir: str | Path, config_digest: str, base_seed: int
    ) -> "RunManifest":
        """Load the existing manifest or start a fresh one.

        A manifest written under a different config or seed is stale;
        continuing to append to it would mix incompatible artifacts, so
        it is replaced instead.
        """
        manifest = cls(output_dir, config_digest, base_seed)
        if manifest.path.exists():
            with open(manifest.path) as fh:
                try:
                    existing = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ContractViolationError(
                        f"corrupt manifest at {manifest.path}: {exc}"
                    ) from exc
            if (
                existing.get("config_digest") == config_digest
                and existing.get("base_seed") == int(base_seed)
            ):
                manifest.data = existing
        return manifest

    def record(self, path: str | Path, deterministic: bool = True) -> None:
        """Digest one emitted file; path must live under the output dir."""
        path = Path(path)
        rel = path.relative_to(self.output_dir)
        self.data["artifacts"][str(rel)] = {
            "sha256": sha256_file(path),
            "deterministic": bool(deterministic),
        }

    def record_wall_clock(self, command: str, seconds: float) -> None:
        self.data["wall_clock_s"][command] = float(seconds)

    def artifact_digest(self, name: str) -> str:
        entry = self.data["artifacts"].get(name)
        if entry is None:
            raise ContractViolationError(f"artifact '{name}' not in manifest")
        return entry["sha256"]

    def write(self) -> None:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="\n") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")


def deterministic_digests(manifest_path: str | Path) -> dict[str, str]:
    """Map of artifact name to digest, deterministic entries only."""
    with open(manifest_path) as fh:
        data = json.load(fh)
    return {
        name: entry["sha256"]
        for name, entry in sorted(data.get("artifacts", {}).items())
        if entry.get("deterministic", False)
    }
