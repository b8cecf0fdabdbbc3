"""
Persistence of recipe results: CSV tables, JSON sidecars and the run manifest.
"""
import logging
import os
import shutil
from collections import defaultdict
from typing import Dict, List

import orjson

from chemostat import __version__
from chemostat.entity.manifest import OutputRecord, RecipeResult, RunManifest
from chemostat.exceptions import ChemostatException, ErrorCode
from chemostat.utils.common import dump_json, sha256_file, write_csv

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def _relative(path: str, root: str) -> str:
    return os.path.relpath(path, root).replace(os.sep, "/")


def write_manifest(manifest: RunManifest, path: str) -> None:
    """Write the manifest atomically: temporary file, then rename."""
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(dump_json(manifest.model_dump(mode="json")))
    os.replace(tmp, path)


def emit_outputs(recipe: str, result: RecipeResult, out_dir: str, config_hash: str,
                 seed: int = 0, wall_clock: float = 0.0) -> RunManifest:
    """
    Write every table and sidecar under ``<out_dir>/<recipe>/`` and the manifest last

    Files are named ``<kind>-<index>.csv`` / ``.json`` with the index counting
    per kind in emission order. The recipe directory is replaced wholesale; on
    failure everything written so far is removed and no manifest exists.

    Returns:
        RunManifest listing every file with its sha256
    """
    recipe_dir = os.path.join(out_dir, recipe)
    written: List[str] = []
    try:
        if os.path.isdir(recipe_dir):
            shutil.rmtree(recipe_dir)
        os.makedirs(recipe_dir)

        counters: Dict[str, int] = defaultdict(int)
        for kind, frame in result.tables:
            path = os.path.join(recipe_dir, f"{kind}-{counters[kind]}.csv")
            counters[kind] += 1
            write_csv(frame, path)
            written.append(path)

        json_counters: Dict[str, int] = defaultdict(int)
        for kind, record in result.sidecars:
            path = os.path.join(recipe_dir, f"{kind}-{json_counters[kind]}.json")
            json_counters[kind] += 1
            encoded = dump_json(record)
            with open(path, "wb") as f:
                f.write(encoded)
            written.append(path)

        manifest = RunManifest(
            recipe=recipe, config_hash=config_hash, version=__version__, seed=seed,
            outputs=[OutputRecord(path=_relative(p, out_dir), sha256=sha256_file(p)) for p in written],
            wall_clock=wall_clock,
        )
        write_manifest(manifest, os.path.join(recipe_dir, MANIFEST_NAME))
    except Exception as e:
        logger.error(f"Writing outputs of {recipe} failed: {e}", exc_info=True)
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        tmp = os.path.join(recipe_dir, MANIFEST_NAME + ".tmp")
        if os.path.exists(tmp):
            os.remove(tmp)
        raise ChemostatException(ErrorCode.OUTPUT_ERROR, f"{recipe}: {e}")

    logger.info(f"Wrote {len(written)} files and the manifest to {recipe_dir}")
    return manifest


def load_manifest(path: str) -> RunManifest:
    try:
        with open(path, "rb") as f:
            return RunManifest.model_validate(orjson.loads(f.read()))
    except Exception as e:
        raise ChemostatException(ErrorCode.OUTPUT_ERROR, f"cannot read manifest {path}: {e}")


def verify_manifest(path: str) -> List[str]:
    """
    Re-hash every output listed in a manifest

    Returns:
        Relative paths that are missing or whose checksum no longer matches
    """
    manifest = load_manifest(path)
    # manifest sits in <root>/<recipe>/
    root = os.path.dirname(os.path.dirname(os.path.abspath(path)))
    bad = []
    for record in manifest.outputs:
        target = os.path.join(root, record.path)
        if not os.path.isfile(target) or sha256_file(target) != record.sha256:
            bad.append(record.path)
    if bad:
        logger.warning(f"{len(bad)} outputs of {manifest.recipe} fail verification: {bad}")
    return bad
