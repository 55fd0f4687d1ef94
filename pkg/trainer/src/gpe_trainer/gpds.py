"""Reader for the GPDS trajectory container written by the solver package.

Layout (little-endian):

    header:  magic "GPDS" | version u32 | sample count u32 | grid n u32
    record:  a f64 | v1 f64 | v2 f64 | omega f64 | kappa f64
             | tolerance f64 | run id u64 | j u8
             | three (n, n, 2) float32 arrays: state, gradient, target

This module is deliberately independent of the solver package: the file
format is the interface.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"GPDS"
FORMAT_VERSION = 1
_META = struct.Struct("<5dd QB")


class GpdsError(ValueError):
    """Malformed GPDS container."""


@dataclass
class Sample:
    state: np.ndarray  # (n, n, 2) float32 [Re, Im]
    grad: np.ndarray
    target: np.ndarray
    tolerance: float
    a: float
    v1: float
    v2: float
    omega: float
    kappa: float
    run_id: int
    j: int


@dataclass
class Dataset:
    samples: list[Sample]
    n: int
    box_width: float

    @property
    def cell_area(self) -> float:
        return (self.box_width / self.n) ** 2

    def __len__(self) -> int:
        return len(self.samples)


def read_gpds(path) -> Dataset:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 16:
        raise GpdsError(f"file too short for a header ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise GpdsError(f"bad magic {buf[:4]!r} at offset 0")
    version, count, n = struct.unpack_from("<III", buf, 4)
    if version != FORMAT_VERSION:
        raise GpdsError(f"unsupported version {version}")
    array_bytes = n * n * 2 * 4
    expected = 16 + count * (_META.size + 3 * array_bytes)
    if len(buf) != expected:
        raise GpdsError(
            f"size mismatch: expected {expected} bytes for {count} records, "
            f"got {len(buf)}"
        )
    samples = []
    off = 16
    box_width = None
    for _ in range(count):
        a, v1, v2, omega, kappa, tol, run_id, j = _META.unpack_from(buf, off)
        off += _META.size
        arrays = []
        for _ in range(3):
            arr = np.frombuffer(buf, dtype="<f4", count=n * n * 2, offset=off)
            arrays.append(arr.reshape(n, n, 2).copy())
            off += array_bytes
        if box_width is None:
            box_width = a
        elif box_width != a:
            raise GpdsError("mixed box widths in one container")
        samples.append(Sample(
            state=arrays[0], grad=arrays[1], target=arrays[2],
            tolerance=tol, a=a, v1=v1, v2=v2, omega=omega, kappa=kappa,
            run_id=run_id, j=j,
        ))
    if box_width is None:
        raise GpdsError("container holds no samples")
    return Dataset(samples=samples, n=n, box_width=box_width)
