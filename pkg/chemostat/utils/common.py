import hashlib
from typing import Any

import orjson
import pandas as pd

FLOAT_FORMAT = "%.17g"
JSON_OPTIONS = orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def sha256_json(data: Any) -> str:
    """Checksum of the canonical (sorted-key) JSON encoding of data."""
    return hashlib.sha256(orjson.dumps(data, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY)).hexdigest()


def dump_json(data: Any) -> bytes:
    return orjson.dumps(data, option=JSON_OPTIONS)


def write_csv(frame: pd.DataFrame, path: str) -> None:
    # 17 significant digits round-trip every double
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
