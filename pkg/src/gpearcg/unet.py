"""Self-contained forward pass of the correction U-Net plus its weight format.

The network is a five-level encoder/decoder: per level two 3x3 zero-padded
convolutions with ReLU, 2x2 max-pooling down, 2x2 stride-2 transposed
convolutions up, skip concatenation (skip channels first), and a final 1x1
convolution.  Input is the 4-channel real/imaginary stack of a state and its
gradient; output is a 2-channel field.  No normalization layer anywhere: the
output norm is the quality signal the acceptance gate reads.

Weights travel in a little-endian binary archive ("GPUW"):

    header:  magic "GPUW" | format version u32 | tensor count u32
    tensor:  name length u16 | name utf-8 | ndim u8 | dims u32 * ndim
             | float32 data, row-major

Convolution weights are stored [out_channels, in_channels, kh, kw] -- also
for transposed convolutions -- and biases as [channels].  A JSON sidecar
records the topology so a loaded archive can be validated tensor by tensor.

Everything here is float32 numpy; the 64-bit solver fields are converted at
the prepare/postprocess boundary.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import Grid, GridMismatchError, State, TangentField, to_real, to_spectral

__all__ = [
    "NetworkSpec",
    "WeightArchive",
    "ArchiveError",
    "UnetModel",
    "load_archive",
    "save_archive",
    "zero_archive",
    "random_archive",
    "write_spec_sidecar",
    "read_spec_sidecar",
    "validate_archive",
    "forward",
    "prepare_input",
    "postprocess",
    "conv3x3",
    "maxpool2",
    "upconv2x2",
]

MAGIC = b"GPUW"
FORMAT_VERSION = 1


class ArchiveError(ValueError):
    """Malformed or inconsistent weight archive."""


@dataclass(frozen=True)
class NetworkSpec:
    """Topology of the correction network.

    ``widths`` are the per-level channel counts of the contracting path;
    the default five-level ladder carries about 31 million parameters.
    """

    widths: tuple[int, ...] = (64, 128, 256, 512, 1024)
    in_channels: int = 4
    out_channels: int = 2

    def __post_init__(self):
        if len(self.widths) < 1 or any(w < 1 for w in self.widths):
            raise ValueError(f"invalid channel widths {self.widths}")

    @property
    def levels(self) -> int:
        return len(self.widths)

    @property
    def pool_factor(self) -> int:
        return 2 ** (self.levels - 1)

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        """Ordered name -> shape map of every parameter tensor."""
        shapes: dict[str, tuple[int, ...]] = {}
        prev = self.in_channels
        for lvl, w in enumerate(self.widths, start=1):
            shapes[f"enc{lvl}.conv1.weight"] = (w, prev, 3, 3)
            shapes[f"enc{lvl}.conv1.bias"] = (w,)
            shapes[f"enc{lvl}.conv2.weight"] = (w, w, 3, 3)
            shapes[f"enc{lvl}.conv2.bias"] = (w,)
            prev = w
        for lvl in range(self.levels - 1, 0, -1):
            hi = self.widths[lvl]
            lo = self.widths[lvl - 1]
            shapes[f"up{lvl}.weight"] = (lo, hi, 2, 2)
            shapes[f"up{lvl}.bias"] = (lo,)
            shapes[f"dec{lvl}.conv1.weight"] = (lo, 2 * lo, 3, 3)
            shapes[f"dec{lvl}.conv1.bias"] = (lo,)
            shapes[f"dec{lvl}.conv2.weight"] = (lo, lo, 3, 3)
            shapes[f"dec{lvl}.conv2.bias"] = (lo,)
        shapes["out.weight"] = (self.out_channels, self.widths[0], 1, 1)
        shapes["out.bias"] = (self.out_channels,)
        return shapes

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.tensor_shapes().values())

    def to_json_dict(self) -> dict:
        return {
            "format": "GPUW",
            "version": FORMAT_VERSION,
            "widths": list(self.widths),
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
        }


@dataclass
class WeightArchive:
    """Ordered named float32 tensors."""

    tensors: dict[str, np.ndarray] = dc_field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors.keys())


def save_archive(archive: WeightArchive | dict, path) -> None:
    """Write tensors in the GPUW binary layout."""
    tensors = archive.tensors if isinstance(archive, WeightArchive) else archive
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            if arr.ndim > 4:
                raise ArchiveError(f"tensor {name!r} has {arr.ndim} > 4 dims")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_archive(source) -> WeightArchive:
    """Parse a GPUW archive from a path or a bytes object."""
    if isinstance(source, (bytes, bytearray)):
        buf = bytes(source)
    else:
        with open(source, "rb") as fh:
            buf = fh.read()
    if len(buf) < 12:
        raise ArchiveError(f"file too short for a header ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise ArchiveError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION:
        raise ArchiveError(f"unsupported format version {version}")
    off = 12
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        if off + 2 > len(buf):
            raise ArchiveError(f"truncated at tensor {i} name length (offset {off})")
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        if off + nlen + 1 > len(buf):
            raise ArchiveError(f"truncated at tensor {i} name (offset {off})")
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        ndim = buf[off]
        off += 1
        if ndim > 4:
            raise ArchiveError(f"tensor {name!r} has {ndim} > 4 dims")
        if off + 4 * ndim > len(buf):
            raise ArchiveError(f"truncated at tensor {name!r} dims (offset {off})")
        dims = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        size = int(np.prod(dims)) if ndim else 1
        nbytes = 4 * size
        if off + nbytes > len(buf):
            raise ArchiveError(
                f"truncated in tensor {name!r} data: need {nbytes} bytes at "
                f"offset {off}, file has {len(buf)}"
            )
        arr = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(dims)
        off += nbytes
        if name in tensors:
            raise ArchiveError(f"duplicate tensor name {name!r}")
        tensors[name] = arr.copy()
    if off != len(buf):
        raise ArchiveError(f"{len(buf) - off} trailing bytes after last tensor")
    return WeightArchive(tensors=tensors)


def validate_archive(spec: NetworkSpec, archive: WeightArchive) -> None:
    """Check the archive holds exactly the spec's tensors with right shapes."""
    expected = spec.tensor_shapes()
    for name, shape in expected.items():
        if name not in archive:
            raise ArchiveError(f"archive is missing tensor {name!r}")
        have = archive[name].shape
        if tuple(have) != shape:
            raise ArchiveError(
                f"tensor {name!r} has dims {tuple(have)}, spec wants {shape}"
            )
    extra = set(archive.names()) - set(expected)
    if extra:
        raise ArchiveError(f"archive has unexpected tensors: {sorted(extra)}")


def zero_archive(spec: NetworkSpec) -> WeightArchive:
    return WeightArchive(
        {n: np.zeros(s, dtype=np.float32) for n, s in spec.tensor_shapes().items()}
    )


def random_archive(spec: NetworkSpec, seed: int) -> WeightArchive:
    """He-style scaled random weights; activations stay O(1) through depth."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in spec.tensor_shapes().items():
        if name.endswith("bias"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:]))
            std = np.sqrt(2.0 / fan_in)
            tensors[name] = (std * rng.standard_normal(shape)).astype(np.float32)
    return WeightArchive(tensors)


def write_spec_sidecar(spec: NetworkSpec, path, extra: dict | None = None) -> None:
    doc = spec.to_json_dict()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_spec_sidecar(path) -> NetworkSpec:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "GPUW":
        raise ArchiveError(f"sidecar format {doc.get('format')!r} is not GPUW")
    if doc.get("version") != FORMAT_VERSION:
        raise ArchiveError(f"unsupported sidecar version {doc.get('version')}")
    return NetworkSpec(
        widths=tuple(doc["widths"]),
        in_channels=int(doc.get("in_channels", 4)),
        out_channels=int(doc.get("out_channels", 2)),
    )


# ---------------------------------------------------------------------------
# forward-pass primitives, channels-first float32


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same-size 3x3 convolution with zero padding, via im2col + GEMM."""
    c, h, wd = x.shape
    o = w.shape[0]
    xp = np.zeros((c, h + 2, wd + 2), dtype=np.float32)
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((c, 9, h * wd), dtype=np.float32)
    idx = 0
    for di in range(3):
        for dj in range(3):
            cols[:, idx, :] = xp[:, di:di + h, dj:dj + wd].reshape(c, -1)
            idx += 1
    y = w.reshape(o, c * 9) @ cols.reshape(c * 9, h * wd)
    y += b[:, None]
    return y.reshape(o, h, wd)


def conv1x1(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    c, h, wd = x.shape
    o = w.shape[0]
    y = w.reshape(o, c) @ x.reshape(c, h * wd)
    y += b[:, None]
    return y.reshape(o, h, wd)


def maxpool2(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).max(axis=(2, 4))


def upconv2x2(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """2x2 stride-2 transposed convolution; doubles both spatial dims.

    Weight layout is the archive convention [out, in, 2, 2]; with stride
    equal to the kernel size the 2x2 output blocks do not overlap.
    """
    c, h, wd = x.shape
    o = w.shape[0]
    wm = np.ascontiguousarray(w.transpose(0, 2, 3, 1).reshape(o * 4, c))
    y = wm @ x.reshape(c, h * wd)  # (o*4, h*w)
    y = y.reshape(o, 2, 2, h, wd).transpose(0, 3, 1, 4, 2).reshape(o, 2 * h, 2 * wd)
    return y + b[:, None, None]


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0, out=x)


def _double_conv(x, archive, prefix):
    x = _relu(conv3x3(x, archive[f"{prefix}.conv1.weight"], archive[f"{prefix}.conv1.bias"]))
    x = _relu(conv3x3(x, archive[f"{prefix}.conv2.weight"], archive[f"{prefix}.conv2.bias"]))
    return x


def forward(spec: NetworkSpec, archive: WeightArchive, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; (n, n, in_channels) -> (n, n, out_channels).

    Fully convolutional: any spatial size divisible by the pooling factor
    is accepted, and the output spatial size equals the input's.
    """
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[0] != x.shape[1] or x.shape[2] != spec.in_channels:
        raise ValueError(
            f"expected (n, n, {spec.in_channels}) input, got {x.shape}"
        )
    n = x.shape[0]
    if n % spec.pool_factor != 0:
        raise ValueError(
            f"spatial size {n} not divisible by the pooling factor {spec.pool_factor}"
        )
    validate_archive(spec, archive)

    t = np.ascontiguousarray(x.transpose(2, 0, 1), dtype=np.float32)
    skips = []
    for lvl in range(1, spec.levels + 1):
        if lvl > 1:
            t = maxpool2(t)
        t = _double_conv(t, archive, f"enc{lvl}")
        skips.append(t)
    for lvl in range(spec.levels - 1, 0, -1):
        t = upconv2x2(t, archive[f"up{lvl}.weight"], archive[f"up{lvl}.bias"])
        t = np.concatenate([skips[lvl - 1], t], axis=0)
        t = _double_conv(t, archive, f"dec{lvl}")
    t = conv1x1(t, archive["out.weight"], archive["out.bias"])
    return np.ascontiguousarray(t.transpose(1, 2, 0))


# ---------------------------------------------------------------------------
# solver <-> network boundary


def prepare_input(phi: State, g: TangentField) -> np.ndarray:
    """Stack [Re phi, Im phi, Re g, Im g] real-space channels, float64.

    No normalization is applied; the network sees the raw fields.  The cast
    to float32 happens inside the forward pass, so this stays the exact
    transform of the solver fields and inverts losslessly.
    """
    if phi.grid != g.grid:
        raise GridMismatchError(f"grid mismatch: {phi.grid} vs {g.grid}")
    u = to_real(phi)
    w = to_real(g)
    return np.stack([u.real, u.imag, w.real, w.imag], axis=-1)


def postprocess(output: np.ndarray, grid: Grid) -> State:
    """Combine the 2-channel output into an (unnormalized) spectral state."""
    output = np.asarray(output)
    if output.shape != (grid.n, grid.n, 2):
        raise ValueError(
            f"expected ({grid.n}, {grid.n}, 2) network output, got {output.shape}"
        )
    samples = output[..., 0].astype(np.float64) + 1j * output[..., 1].astype(np.float64)
    return State(grid=grid, coeffs=to_spectral(samples, grid))


class UnetModel:
    """Loaded network bound to its topology; callable on input tensors."""

    def __init__(self, spec: NetworkSpec, archive: WeightArchive):
        validate_archive(spec, archive)
        self.spec = spec
        self.archive = archive

    @classmethod
    def load(cls, archive_path, spec_path) -> "UnetModel":
        spec = read_spec_sidecar(spec_path)
        return cls(spec, load_archive(archive_path))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self.spec, self.archive, x)
