#!/bin/env python3

# afmlens: Model application-facing metrics from network-level metrics.
# This file is part of afmlens, licensed under the GNU GPLv3 or later.
# See <http://www.gnu.org/licenses/> for details.

import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

from . import ENCODING

logger = logging.getLogger(__name__)


def create_dirs(path: Path) -> None:
    """Create Paths recursively, with mode rwxr-x---.

    Arguments:
        path (Path): Path to create, if nonexistent.
    """
    Path.mkdir(Path(path), mode=0o0750, parents=True, exist_ok=True)


def read_bytes(file_path: Path) -> bytes:
    """Read a whole input file.

    Raises:
        FileNotFoundError: If the file does not exist.
    """
    file_path = Path(file_path)
    if not file_path.is_file():
        raise FileNotFoundError(f"No such input file: '{file_path}'")
    return file_path.read_bytes()


def get_file_hash(file_path: Path) -> str:
    """Generate the SHA-256 digest of a File.

    Args:
        file_path (Path): The Path of the File to be hashed.

    Returns:
        str: The hex digest.
    """
    hash_sha256 = hashlib.sha256()
    with open(file_path, "rb") as fhnd:
        for chunk in iter(lambda: fhnd.read(4096), b""):
            hash_sha256.update(chunk)
    return hash_sha256.hexdigest()


def dump_json(data) -> str:
    """Serialize with sorted keys and a trailing newline, so equal data gives equal bytes."""
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def write_json(file_path: Path, data) -> Path:
    file_path = Path(file_path)
    create_dirs(file_path.parent)
    file_path.write_text(dump_json(data), encoding=ENCODING)
    logger.debug("Wrote %s", file_path)
    return file_path


def write_csv(file_path: Path, header: Sequence[str], rows: Iterable[dict]) -> Path:
    """Write dict rows as CSV; None becomes an empty cell.

    Arguments:
        file_path (Path): Destination file, parents are created.
        header (Sequence[str]): Column order.
        rows (Iterable[dict]): Rows keyed by column.

    Returns:
        Path: The written file.
    """
    file_path = Path(file_path)
    create_dirs(file_path.parent)
    with open(file_path, "w", encoding=ENCODING, newline="") as fhnd:
        writer = csv.DictWriter(fhnd, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: ("" if val is None else val) for key, val in row.items()})
    logger.debug("Wrote %s", file_path)
    return file_path


def write_jsonl(file_path: Path, rows: Iterable[dict]) -> Path:
    file_path = Path(file_path)
    create_dirs(file_path.parent)
    with open(file_path, "w", encoding=ENCODING) as fhnd:
        for row in rows:
            fhnd.write(json.dumps(row, sort_keys=True) + "\n")
    logger.debug("Wrote %s", file_path)
    return file_path
