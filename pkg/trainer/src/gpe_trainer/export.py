"""GPUW weight-archive writer plus the JSON topology sidecar.

Archive layout (little-endian):

    header:  magic "GPUW" | format version u32 | tensor count u32
    tensor:  name length u16 | name utf-8 | ndim u8 | dims u32 * ndim
             | float32 data, row-major

Convolution weights are stored [out_channels, in_channels, kh, kw]; torch's
ConvTranspose2d keeps [in, out, kh, kw], so transposed-convolution weights
are swapped on export.  Tensor names: enc{L}.conv{1|2}.{weight|bias},
up{L}.{weight|bias}, dec{L}.conv{1|2}.{weight|bias}, out.{weight|bias},
with up/dec numbered by the level they land on.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import CorrectionUnet

MAGIC = b"GPUW"
FORMAT_VERSION = 1


def archive_tensors(model: CorrectionUnet) -> dict[str, np.ndarray]:
    """Ordered name -> float32 array map in the archive convention."""
    tensors: dict[str, np.ndarray] = {}

    def put(name, tensor):
        tensors[name] = tensor.detach().cpu().numpy().astype("<f4")

    for lvl, enc in enumerate(model.encoders, start=1):
        put(f"enc{lvl}.conv1.weight", enc.conv1.weight)
        put(f"enc{lvl}.conv1.bias", enc.conv1.bias)
        put(f"enc{lvl}.conv2.weight", enc.conv2.weight)
        put(f"enc{lvl}.conv2.bias", enc.conv2.bias)
    levels = len(model.widths)
    for i, (up, dec) in enumerate(zip(model.ups, model.decoders)):
        lvl = levels - 1 - i  # lands on this level
        put(f"up{lvl}.weight", up.weight.transpose(0, 1))
        put(f"up{lvl}.bias", up.bias)
        put(f"dec{lvl}.conv1.weight", dec.conv1.weight)
        put(f"dec{lvl}.conv1.bias", dec.conv1.bias)
        put(f"dec{lvl}.conv2.weight", dec.conv2.weight)
        put(f"dec{lvl}.conv2.bias", dec.conv2.bias)
    put("out.weight", model.out.weight)
    put("out.bias", model.out.bias)
    return tensors


def write_gpuw(tensors: dict[str, np.ndarray], path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def export_weights(model: CorrectionUnet, path, *, sidecar_path=None,
                   extra: dict | None = None) -> None:
    """Write the archive and its JSON topology sidecar."""
    write_gpuw(archive_tensors(model), path)
    if sidecar_path is None:
        sidecar_path = str(path) + ".json"
    doc = {
        "format": "GPUW",
        "version": FORMAT_VERSION,
        "widths": list(model.widths),
        "in_channels": model.in_channels,
        "out_channels": model.out_channels,
    }
    if extra:
        doc.update(extra)
    with open(sidecar_path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
