"""Binary checkpoint format.

Layout::

    SVCK1\\n
    spec <json>\\n
    phase <softmax|siamese|init>\\n
    seed <int>\\n
    epoch <int>\\n
    history <json>\\n
    tensor <name> <d0>x<d1>...\\n      (one line per tensor, in blob order)
    end\\n
    <little-endian float32 blobs>

The header is sorted-key JSON and contains no timestamps, so identical
training runs produce byte-identical files.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import SpecMismatch, VeridError
from .model import ModelSpec, Network

MAGIC = b"SVCK1\n"


@dataclass
class ModelCheckpoint:
    spec: ModelSpec
    params: dict
    phase: str = "init"
    seed: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)

    def network(self):
        return Network(self.spec, self.params)


def checkpoint_bytes(ckpt):
    shapes = ckpt.spec.param_shapes()
    lines = [
        "spec " + json.dumps(ckpt.spec.to_dict(), sort_keys=True),
        f"phase {ckpt.phase}",
        f"seed {int(ckpt.seed)}",
        f"epoch {int(ckpt.epoch)}",
        "history " + json.dumps(ckpt.history, sort_keys=True),
    ]
    for name, shape in shapes.items():
        lines.append(f"tensor {name} " + "x".join(str(d) for d in shape))
    lines.append("end")
    blobs = []
    for name, shape in shapes.items():
        arr = ckpt.params[name]
        if arr.shape != tuple(shape):
            raise SpecMismatch(f"{name} has shape {arr.shape}, spec says {shape}")
        blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return MAGIC + ("\n".join(lines) + "\n").encode("utf-8") + b"".join(blobs)


def save_checkpoint(path, ckpt):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ckpt))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise VeridError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    header = {}
    tensors = []
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise VeridError(f"{path}: truncated header")
        line = data[pos:nl].decode("utf-8")
        pos = nl + 1
        if line == "end":
            break
        key, _, value = line.partition(" ")
        if key == "tensor":
            name, _, dims = value.partition(" ")
            tensors.append((name, tuple(int(d) for d in dims.split("x"))))
        else:
            header[key] = value
    try:
        spec = ModelSpec.from_dict(json.loads(header["spec"]))
        phase = header["phase"]
        seed = int(header["seed"])
        epoch = int(header["epoch"])
        history = json.loads(header.get("history", "[]"))
    except (KeyError, ValueError, TypeError) as exc:
        raise VeridError(f"{path}: bad checkpoint header ({exc})") from exc

    expected = spec.param_shapes()
    if [n for n, _ in tensors] != list(expected):
        raise SpecMismatch(f"{path}: tensor list does not match the declared spec")
    params = {}
    for name, shape in tensors:
        if shape != tuple(expected[name]):
            raise SpecMismatch(f"{path}: {name} declared {shape}, spec implies {expected[name]}")
        n_bytes = 4 * int(np.prod(shape))
        blob = data[pos : pos + n_bytes]
        if len(blob) != n_bytes:
            raise VeridError(f"{path}: truncated tensor {name}")
        params[name] = np.frombuffer(blob, dtype="<f4").reshape(shape).astype(np.float32)
        pos += n_bytes
    if pos != len(data):
        raise VeridError(f"{path}: {len(data) - pos} trailing bytes")
    return ModelCheckpoint(spec, params, phase, seed, epoch, history)
