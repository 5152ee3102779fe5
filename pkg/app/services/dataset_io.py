"""GLMDS1 container for factored datasets.

Layout: the 6-byte magic ``GLMDS1``, N and p as little-endian int64, then the
arrays V0 (p x p), s_tr (p), U (N x p), w0 (p), y (N), s_ts (p) as little-endian
float64 in column-major order. V1, V2 and the padded singular values are
recomputed from U on load.
"""
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np

from app.exceptions import DatasetFormatError
from app.models.glm import Dataset, GlmChannel
from app.services.synthdata import factor_u

logger = logging.getLogger(__name__)

MAGIC = b"GLMDS1"
HEADER_SIZE = len(MAGIC) + 16
MAX_DIM = 1 << 20


def _layout(N: int, p: int):
    return (("V0", (p, p)), ("s_tr", (p,)), ("U", (N, p)), ("w0", (p,)), ("y", (N,)), ("s_ts", (p,)))


def dumps_dataset(dataset: Dataset) -> bytes:
    parts = [MAGIC, np.array([dataset.N, dataset.p], dtype="<i8").tobytes()]
    for name, _ in _layout(dataset.N, dataset.p):
        parts.append(np.asarray(getattr(dataset, name), dtype="<f8").tobytes(order="F"))
    return b"".join(parts)


def loads_dataset(data: bytes, channel: Optional[GlmChannel] = None) -> Dataset:
    if len(data) < HEADER_SIZE or data[: len(MAGIC)] != MAGIC:
        raise DatasetFormatError("Not a GLMDS1 container (bad magic)")
    N, p = (int(v) for v in np.frombuffer(data, dtype="<i8", count=2, offset=len(MAGIC)))
    if not (1 <= N <= MAX_DIM and 1 <= p <= MAX_DIM):
        raise DatasetFormatError(f"Implausible dimensions N={N}, p={p}")

    layout = _layout(N, p)
    expected = HEADER_SIZE + 8 * sum(int(np.prod(shape)) for _, shape in layout)
    if len(data) != expected:
        raise DatasetFormatError(f"Container holds {len(data)} bytes, expected {expected} for N={N}, p={p}")

    arrays = {}
    offset = HEADER_SIZE
    for name, shape in layout:
        count = int(np.prod(shape))
        flat = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        arrays[name] = flat.reshape(shape, order="F").astype(float)
        offset += 8 * count
        if not np.all(np.isfinite(arrays[name])):
            raise DatasetFormatError(f"Array {name} holds non-finite values")

    V2, s_plus, s_minus, V1 = factor_u(arrays["U"])
    try:
        return Dataset(V1=V1, V2=V2, s_plus=s_plus, s_minus=s_minus, channel=channel, **arrays)
    except ValueError as e:
        logger.error(f"GLMDS1 payload failed validation: {e}")
        raise DatasetFormatError(str(e)) from e


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_bytes(dumps_dataset(dataset))
    logger.info(f"Wrote dataset N={dataset.N} p={dataset.p} to {path}")
    return path


def load_dataset(path: Union[str, Path], channel: Optional[GlmChannel] = None) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(f"Dataset file not found: {path}")
    dataset = loads_dataset(path.read_bytes(), channel)
    logger.info(f"Loaded dataset N={dataset.N} p={dataset.p} from {path}")
    return dataset
