"""Run manifests: canonical JSON and stable config hashing."""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import json

from handgrid import __version__
from handgrid.handspec import serialize_hand_spec


def _plain(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "tolist"):
        return obj.tolist()
    return obj


def canonical_json(obj):
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_text(text):
    return hashlib.sha256(text.encode()).hexdigest()


def model_hash(model):
    return sha256_text(serialize_hand_spec(model))


def config_hash(config):
    """Hash of every configuration value that can change a result."""
    return sha256_text(canonical_json(config))


def build_manifest(command, argv, config, outputs, extra=None):
    doc = {
        "tool": "handgrid",
        "tool_version": __version__,
        "command": command,
        "argv": list(argv),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "config": _plain(config),
        "config_hash": config_hash(config),
        "outputs": outputs,
    }
    if extra:
        doc.update(_plain(extra))
    return doc


def write_manifest(path, manifest):
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_manifest(path):
    with open(path) as fh:
        return json.load(fh)
