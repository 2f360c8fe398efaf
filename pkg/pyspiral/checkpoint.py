"""Checkpoint and prediction files.

A checkpoint is a text manifest followed by a binary payload:

    PYSPIRAL-CHECKPOINT 1
    spec {"classes": 6890, "dropout": 0.3, ...}
    meta {"epoch": 12, "seed": 7, ...}
    adam {"beta1": 0.9, "beta2": 0.999, "epsilon": 1e-08, "lr": 0.001, "t": 960}
    tensor params/fc_in.W 544,16 0 8704
    ...
    end
    <little-endian float64 payload>

Each `tensor` line gives the name, the shape, the offset and the number of
values in the payload, counted in float64 values. Floats in the JSON lines
round-trip exactly, so a loaded checkpoint reproduces the saved forward
outputs bit for bit.
"""

import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .engine import AdamState, ParamStore
from .features import Normalizer, load_labels, save_labels
from .model import CorrespondenceNet, NetworkSpec, Prediction, network_class
from .util import DataFormatError, PyspiralError, debug

MAGIC = "PYSPIRAL-CHECKPOINT"
VERSION = 1
_PAYLOAD_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    """A trained network with everything needed to resume training or to
    serialize new meshes the same way as during training."""

    spec: NetworkSpec
    params: ParamStore
    adam: AdamState = field(default_factory=AdamState)
    normalizer: Optional[Normalizer] = None
    augment: bool = False
    distance: str = "euclidean"
    meta: Dict[str, Any] = field(default_factory=dict)

    def network(self) -> CorrespondenceNet:
        """A network over a copy of the stored parameters."""
        return network_class(self.spec)(self.spec, self.params.copy())

    def feature_dim(self) -> int:
        """Dimension of the per-vertex descriptors the network was trained on."""
        return self.spec.input_dim - (2 if self.augment else 0)


def _tensors(checkpoint: Checkpoint) -> List[Tuple[str, np.ndarray]]:
    tensors = [(f"params/{k}", v) for k, v in checkpoint.params.items()]
    tensors += [(f"adam.m/{k}", v) for k, v in checkpoint.adam.m.items()]
    tensors += [(f"adam.v/{k}", v) for k, v in checkpoint.adam.v.items()]
    if checkpoint.normalizer is not None:
        tensors += [
            ("normalizer/mean", checkpoint.normalizer.mean),
            ("normalizer/std", checkpoint.normalizer.std),
        ]
    return tensors


def _json_line(key: str, value: Dict[str, Any]) -> str:
    return f"{key} {json.dumps(value, sort_keys=True, separators=(', ', ': '))}\n"


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, os.PathLike]) -> None:
    adam = checkpoint.adam
    header = [
        f"{MAGIC} {VERSION}\n",
        _json_line("spec", checkpoint.spec.to_dict()),
        _json_line(
            "meta",
            {**checkpoint.meta, "augment": checkpoint.augment, "distance": checkpoint.distance},
        ),
        _json_line(
            "adam",
            {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
             "epsilon": adam.epsilon, "t": adam.t},
        ),
    ]
    payload = []
    offset = 0
    for name, tensor in _tensors(checkpoint):
        shape = ",".join(str(n) for n in tensor.shape)
        header.append(f"tensor {name} {shape} {offset} {tensor.size}\n")
        payload.append(np.ascontiguousarray(tensor, dtype=_PAYLOAD_DTYPE).tobytes())
        offset += tensor.size
    header.append("end\n")
    with open(path, "wb") as out:
        out.write("".join(header).encode("utf-8"))
        for chunk in payload:
            out.write(chunk)
    debug(f"Saved checkpoint with {offset} values to {os.fspath(path)}")


def _read_manifest(stream, path: str) -> Tuple[Dict[str, Any], List[Tuple[str, Tuple[int, ...], int, int]]]:
    first = stream.readline().decode("utf-8", errors="replace").split()
    if len(first) != 2 or first[0] != MAGIC:
        raise DataFormatError(f"{path}: not a pyspiral checkpoint")
    if first[1] != str(VERSION):
        raise DataFormatError(f"{path}: unsupported checkpoint version {first[1]}")
    sections: Dict[str, Any] = {}
    tensors = []
    while True:
        raw = stream.readline()
        if not raw:
            raise DataFormatError(f"{path}: truncated checkpoint manifest")
        line = raw.decode("utf-8", errors="replace").rstrip("\n")
        if line == "end":
            return sections, tensors
        key, _, rest = line.partition(" ")
        try:
            if key == "tensor":
                name, shape, offset, count = rest.split(" ")
                dims = tuple(int(n) for n in shape.split(",")) if shape else ()
                tensors.append((name, dims, int(offset), int(count)))
            elif key in ("spec", "meta", "adam"):
                sections[key] = json.loads(rest)
            else:
                raise DataFormatError(f"{path}: unknown manifest entry {key!r}")
        except ValueError as exc:
            raise DataFormatError(f"{path}: malformed manifest line {line!r}") from exc


def load_checkpoint(path: Union[str, os.PathLike]) -> Checkpoint:
    path = os.fspath(path)
    with open(path, "rb") as stream:
        sections, entries = _read_manifest(stream, path)
        payload = np.frombuffer(stream.read(), dtype=_PAYLOAD_DTYPE)
    for key in ("spec", "meta", "adam"):
        if key not in sections:
            raise DataFormatError(f"{path}: checkpoint has no {key} entry")
    tensors: Dict[str, np.ndarray] = {}
    for name, shape, offset, count in entries:
        if int(np.prod(shape)) != count or offset + count > len(payload):
            raise DataFormatError(f"{path}: tensor {name} does not fit the payload")
        tensors[name] = payload[offset : offset + count].reshape(shape).astype(np.float64)

    def group(prefix: str) -> Dict[str, np.ndarray]:
        return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

    meta = dict(sections["meta"])
    augment = bool(meta.pop("augment", False))
    distance = meta.pop("distance", "euclidean")
    adam = sections["adam"]
    normalizer = None
    if "normalizer/mean" in tensors:
        normalizer = Normalizer(tensors["normalizer/mean"], tensors["normalizer/std"])
    try:
        spec = NetworkSpec.from_dict(sections["spec"])
        checkpoint = Checkpoint(
            spec,
            ParamStore(group("params/")),
            AdamState(
                adam["lr"], adam["beta1"], adam["beta2"], adam["epsilon"], adam["t"],
                group("adam.m/"), group("adam.v/"),
            ),
            normalizer,
            augment,
            distance,
            meta,
        )
        checkpoint.network()
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"{path}: incomplete checkpoint ({exc})") from None
    except PyspiralError as exc:
        raise DataFormatError(f"{path}: {exc}") from None
    return checkpoint


def save_prediction(prediction: Prediction, path: Union[str, os.PathLike]) -> None:
    """Writes `source target` lines, one per source vertex."""
    save_labels(prediction.targets, path)


def load_prediction(path: Union[str, os.PathLike], num_vertices: Optional[int] = None) -> Prediction:
    """Reads `source target` lines. The source count comes from the file unless
    `num_vertices` pins it; it is unrelated to the template vertex count."""
    return Prediction(load_labels(path, num_vertices))
