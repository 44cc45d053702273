"""Run manifests: what ran, over which inputs, producing which outputs."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field


def _file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _tree_sha256(path: str) -> str:
    h = hashlib.sha256()
    for root, dirs, files in sorted(os.walk(path)):
        dirs.sort()
        for name in sorted(files):
            full = os.path.join(root, name)
            h.update(os.path.relpath(full, path).encode())
            h.update(bytes.fromhex(_file_sha256(full)))
    return h.hexdigest()


def config_digest(command: str, inputs: list[str], flags: dict) -> str:
    """Deterministic digest over the command, input contents, and flags."""
    input_hashes = {}
    for p in sorted(inputs):
        if os.path.isdir(p):
            input_hashes[p] = _tree_sha256(p)
        elif os.path.exists(p):
            input_hashes[p] = _file_sha256(p)
        else:
            input_hashes[p] = "absent"
    payload = json.dumps(
        {"command": command, "inputs": input_hashes, "flags": flags},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class RunManifest:
    command: str
    inputs: list[str]
    digest: str
    outputs: list[str] = field(default_factory=list)
    report_path: str | None = None
    started_unix: float = 0.0
    elapsed_s: float = 0.0


class ManifestTimer:
    def __init__(self, command: str, inputs: list[str], flags: dict):
        self.manifest = RunManifest(
            command=command,
            inputs=list(inputs),
            digest=config_digest(command, inputs, flags),
            started_unix=time.time(),
        )

    def finish(self, outputs: list[str], report_path: str | None = None) -> RunManifest:
        self.manifest.outputs = list(outputs)
        self.manifest.report_path = report_path
        self.manifest.elapsed_s = time.time() - self.manifest.started_unix
        return self.manifest


def write_manifest(manifest: RunManifest, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(manifest), fh, indent=2)
        fh.write("\n")
