"""CSV emission and run manifests.

Floats are written with 17 significant digits (``%.17g``) so that every
double round-trips exactly; identical inputs give byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
            w.writerow([format_value(v) for v in row])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    return str(o)


def make_run_id(command, inputs, seed):
    """Deterministic id from the command, its resolved inputs and the seed."""
    digest = hashlib.sha256(canonical_json({"command": command, "inputs": inputs,
                                            "seed": int(seed)}).encode()).hexdigest()
    return f"{command}-{digest[:16]}"


def list_output_files(output_dir):
    root = Path(output_dir)
    files = []
    for dirpath, _, names in os.walk(root):
        for name in names:
            p = Path(dirpath) / name
            rel = p.relative_to(root).as_posix()
            if rel != MANIFEST_NAME:
                files.append(rel)
    return sorted(files)


def write_manifest(output_dir, command, inputs, seed, config_path=None, game_path=None):
    """Hash every file under ``output_dir`` into ``manifest.json``."""
    root = Path(output_dir)
    files = {rel: sha256_file(root / rel) for rel in list_output_files(root)}
    manifest = {
        "run_id": make_run_id(command, inputs, seed),
        "command": command,
        "config_path": None if config_path is None else str(config_path),
        "game_path": None if game_path is None else str(game_path),
        "seed": int(seed),
        "output_dir": str(root),
        "inputs": json.loads(canonical_json(inputs)),
        "files": files,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def verify_manifest(output_dir):
    """Return the list of files whose hash or presence disagrees with the manifest."""
    root = Path(output_dir)
    manifest = json.loads((root / MANIFEST_NAME).read_text())
    listed = manifest["files"]
    present = set(list_output_files(root))
    bad = sorted(present.symmetric_difference(listed))
    bad += sorted(rel for rel in present & set(listed) if sha256_file(root / rel) != listed[rel])
    return bad
