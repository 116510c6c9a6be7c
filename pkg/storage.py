import gzip
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
from pydantic import BaseModel

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _numpy_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def canonical_json(payload: Any) -> str:
    """Sorted-key JSON; numpy arrays and scalars become lists and Python numbers."""
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    return json.dumps(payload, indent=2, sort_keys=True, default=_numpy_default)


def fingerprint(payload: Any) -> str:
    """SHA-256 of the canonical JSON text."""
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def save_json(filename: PathLike, payload: Any) -> Path:
    """Write atomically: temp file, fsync, then rename over the target."""
    output_path = Path(filename)
    if output_path.parent != Path(""):
        output_path.parent.mkdir(parents=True, exist_ok=True)
    temp_file = output_path.with_name(output_path.name + ".tmp")
    with open(temp_file, "w", encoding="utf-8") as handle:
        handle.write(canonical_json(payload))
        handle.write("\n")
        handle.flush()
        os.fsync(handle.fileno())
    temp_file.replace(output_path)
    logger.info(f"Saved {output_path}")
    return output_path


def load_json(file_path: PathLike) -> Dict[str, Any]:
    file_path = Path(file_path)
    if file_path.suffix == ".gz":
        with gzip.open(file_path, "rt", encoding="utf-8") as handle:
            return json.load(handle)

    with open(file_path, "r", encoding="utf-8") as handle:
        return json.load(handle)
