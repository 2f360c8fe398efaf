"""LSTM-NET and FCS-NET: per-vertex template classification over serialized
spiral neighborhoods.

    LSTM-NET:  FC16 → LSTM150 → LSTM200 → LSTM250 → FC256 → FC(C)
    FCS-NET:   FC16 → FCS100  → FCS150  → FCS200  → FC256 → FC(C)

ReLU follows every layer except the last, which feeds a softmax; dropout
follows FC16 and FC256. The stacked LSTM layers each consume the per-step
hidden states of the layer below; the last step of the final one is the
vertex representation. An FCS layer flattens a whole sequence into one
fully-connected input: the first consumes the N per-step FC16 outputs, each
later one re-gathers the previous FCS outputs of the spiral's vertices.
"""

import abc
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, Tuple, Type

import numpy as np

from .engine import (
    LstmParams,
    ParamStore,
    Tensor,
    cross_entropy,
    dropout,
    dropout_backward,
    fc_backward,
    fc_forward,
    glorot_uniform,
    lstm_sequence_backward,
    lstm_sequence_forward,
    relu,
    relu_backward,
    softmax,
    softmax_cross_entropy_backward,
)
from .features import SerializedBatch
from .spiral import PAD
from .util import ValidationError

DEFAULT_WIDTHS = {
    "lstm": (16, 150, 200, 250, 256),
    "fcs": (16, 100, 150, 200, 256),
}
KIND_ALIASES = {"lstm": "lstm", "lstm-net": "lstm", "fcs": "fcs", "fcs-net": "fcs"}


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a correspondence network.

    `widths` are the five hidden widths (input FC, three sequence layers,
    hidden FC); the output layer has `classes` units."""

    kind: str
    input_dim: int
    classes: int
    seq_len: Optional[int] = None
    widths: Tuple[int, ...] = ()
    dropout: float = 0.3
    forget_bias: float = 0.0

    def __post_init__(self):
        if self.kind not in KIND_ALIASES:
            raise ValidationError(f"unknown network kind {self.kind!r}; expected lstm or fcs")
        object.__setattr__(self, "kind", KIND_ALIASES[self.kind])
        object.__setattr__(self, "widths", tuple(self.widths or DEFAULT_WIDTHS[self.kind]))
        if len(self.widths) != 5 or min(self.widths) < 1:
            raise ValidationError(f"expected five positive layer widths, got {self.widths}")
        if self.input_dim < 1 or self.classes < 1:
            raise ValidationError("input_dim and classes must be positive")
        if self.kind == "fcs" and (self.seq_len is None or self.seq_len < 1):
            raise ValidationError("fcs networks need a positive sequence length")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must lie in [0, 1), got {self.dropout}")

    def to_dict(self) -> Dict[str, Any]:
        return {**asdict(self), "widths": list(self.widths)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkSpec":
        return cls(**{**data, "widths": tuple(data["widths"])})


@dataclass
class ForwardCache:
    batch: SerializedBatch
    train: bool
    values: Dict[str, Any] = field(default_factory=dict)


@dataclass
class Prediction:
    """Predicted template vertex per source vertex, optionally with the full
    class distribution."""

    targets: np.ndarray
    probabilities: Optional[np.ndarray] = None

    def agreement(self, other: "Prediction") -> float:
        return float(np.mean(self.targets == other.targets))


class CorrespondenceNet(abc.ABC):
    """Base class of the networks; subclasses define the parameter layout and
    the sequence layers between FC16 and FC256."""

    def __init__(self, spec: NetworkSpec, params: ParamStore):
        expected = self.param_shapes(spec)
        if list(params) != list(expected):
            raise ValidationError(
                f"parameter names do not match a {spec.kind} network: {list(params)[:4]}..."
            )
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValidationError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.spec = spec
        self.params = params

    @classmethod
    @abc.abstractmethod
    def param_shapes(cls, spec: NetworkSpec) -> Dict[str, Tuple[int, ...]]:
        raise NotImplementedError()

    @classmethod
    def build(cls, spec: NetworkSpec, rng: np.random.Generator) -> "CorrespondenceNet":
        """Glorot-uniform weights, zero biases (plus the optional forget-gate
        offset)."""
        params = ParamStore()
        for name, shape in cls.param_shapes(spec).items():
            if len(shape) == 2:
                params[name] = glorot_uniform(rng, shape[0], shape[1])
            elif name.endswith(".b_f"):
                params[name] = np.full(shape, spec.forget_bias)
            else:
                params[name] = np.zeros(shape)
        return cls(spec, params)

    def count_params(self) -> int:
        return self.params.count()

    @staticmethod
    def _io_shapes(spec: NetworkSpec) -> Tuple[Dict[str, Tuple[int, ...]], Dict[str, Tuple[int, ...]]]:
        w = spec.widths
        head = {"fc_in.W": (spec.input_dim, w[0]), "fc_in.b": (w[0],)}
        tail = {
            "fc_hidden.W": (w[3], w[4]), "fc_hidden.b": (w[4],),
            "fc_out.W": (w[4], spec.classes), "fc_out.b": (spec.classes,),
        }
        return head, tail

    def _check_batch(self, batch: SerializedBatch) -> None:
        if batch.input_dim != self.spec.input_dim:
            raise ValidationError(
                f"network expects {self.spec.input_dim}-dimensional steps, "
                f"batch has {batch.input_dim}"
            )

    @abc.abstractmethod
    def _encode(self, steps: Tensor, cache: ForwardCache) -> Tensor:
        """Maps the per-step FC16 activations (B×N×w0) to the vertex
        representation (B×w3)."""
        raise NotImplementedError()

    @abc.abstractmethod
    def _encode_backward(self, dcode: Tensor, cache: ForwardCache, grads: ParamStore) -> Tensor:
        raise NotImplementedError()

    def forward(
        self,
        batch: SerializedBatch,
        *,
        train: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[Tensor, ForwardCache]:
        """Returns the logits (B×C) and the cache for `backward`."""
        self._check_batch(batch)
        p, spec = self.params, self.spec
        cache = ForwardCache(batch, train)
        values = cache.values
        b, n, d = batch.inputs.shape
        flat = batch.inputs.reshape(b * n, d)
        values["z_in"] = fc_forward(flat, p["fc_in.W"], p["fc_in.b"])
        steps, values["drop_in"] = dropout(relu(values["z_in"]), spec.dropout, train, rng)
        steps = steps.reshape(b, n, -1) * batch.pad_mask[..., None]
        code = self._encode(steps, cache)
        values["code"] = code
        values["z_hidden"] = fc_forward(code, p["fc_hidden.W"], p["fc_hidden.b"])
        hidden, values["drop_hidden"] = dropout(relu(values["z_hidden"]), spec.dropout, train, rng)
        values["hidden"] = hidden
        return fc_forward(hidden, p["fc_out.W"], p["fc_out.b"]), cache

    def backward(self, dlogits: Tensor, cache: ForwardCache) -> ParamStore:
        p, values, batch = self.params, cache.values, cache.batch
        grads = self.params.zeros_like()
        dhidden, grads["fc_out.W"], grads["fc_out.b"] = fc_backward(
            dlogits, values["hidden"], p["fc_out.W"]
        )
        dz = relu_backward(dropout_backward(dhidden, values["drop_hidden"]), values["z_hidden"])
        dcode, grads["fc_hidden.W"], grads["fc_hidden.b"] = fc_backward(
            dz, values["code"], p["fc_hidden.W"]
        )
        dsteps = self._encode_backward(dcode, cache, grads)
        b, n, d = batch.inputs.shape
        dsteps = (dsteps * batch.pad_mask[..., None]).reshape(b * n, -1)
        dz = relu_backward(dropout_backward(dsteps, values["drop_in"]), values["z_in"])
        _, grads["fc_in.W"], grads["fc_in.b"] = fc_backward(
            dz, batch.inputs.reshape(b * n, d), p["fc_in.W"]
        )
        return grads

    def loss_and_grads(
        self,
        batch: SerializedBatch,
        labels: np.ndarray,
        *,
        train: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[float, ParamStore, Tensor]:
        """Cross-entropy of the softmax output against `labels`; returns
        `(loss, grads, probabilities)`."""
        labels = np.asarray(labels)
        if labels.shape != (len(batch.inputs),):
            raise ValidationError(f"expected {len(batch.inputs)} labels, got shape {labels.shape}")
        if labels.min() < 0 or labels.max() >= self.spec.classes:
            raise ValidationError(
                f"labels must lie in [0, {self.spec.classes}), "
                f"found [{labels.min()}, {labels.max()}]"
            )
        logits, cache = self.forward(batch, train=train, rng=rng)
        probs = softmax(logits)
        loss = cross_entropy(probs, labels)
        return loss, self.backward(softmax_cross_entropy_backward(probs, labels), cache), probs

    def predict(self, batch: SerializedBatch, keep_probabilities: bool = False) -> Prediction:
        logits, _ = self.forward(batch)
        probs = softmax(logits)
        return Prediction(probs.argmax(axis=1), probs if keep_probabilities else None)


class LstmNet(CorrespondenceNet):
    """FC16 + LSTM150 + LSTM200 + LSTM250 + FC256 + FC(C)."""

    @classmethod
    def param_shapes(cls, spec: NetworkSpec) -> Dict[str, Tuple[int, ...]]:
        head, tail = cls._io_shapes(spec)
        shapes = dict(head)
        w = spec.widths
        for layer, (din, hidden) in enumerate(zip(w[0:3], w[1:4]), start=1):
            for name, shape in LstmParams.shapes(din, hidden).items():
                shapes[f"lstm{layer}.{name}"] = shape
        shapes.update(tail)
        return shapes

    def _encode(self, steps: Tensor, cache: ForwardCache) -> Tensor:
        mask = cache.batch.pad_mask
        layers = []
        for layer in (1, 2, 3):
            params = LstmParams.from_store(self.params, f"lstm{layer}")
            hs, seq_cache = lstm_sequence_forward(steps, mask, params)
            layers.append((steps, hs, seq_cache))
            steps = relu(hs)
        cache.values["lstm"] = layers
        # Masked steps hold the state, so the last column is the output of the
        # last real step.
        return steps[:, -1]

    def _encode_backward(self, dcode: Tensor, cache: ForwardCache, grads: ParamStore) -> Tensor:
        layers = cache.values["lstm"]
        _, hs, _ = layers[-1]
        dsteps = np.zeros_like(hs)
        dsteps[:, -1] = dcode
        for layer in (3, 2, 1):
            _, hs, seq_cache = layers[layer - 1]
            params = LstmParams.from_store(self.params, f"lstm{layer}")
            dsteps, layer_grads = lstm_sequence_backward(relu_backward(dsteps, hs), seq_cache, params)
            for name, grad in layer_grads.items():
                grads[f"lstm{layer}.{name}"] = grad
        return dsteps


def gather_rows(values: Tensor, indices: np.ndarray, mask: np.ndarray) -> Tensor:
    """`values[indices]` (B×N×W) with zeros on padded steps."""
    return np.where(mask[..., None], values[np.where(mask, indices, 0)], 0.0)


def gather_rows_backward(dgathered: Tensor, indices: np.ndarray, mask: np.ndarray, rows: int) -> Tensor:
    dvalues = np.zeros((rows, dgathered.shape[-1]))
    np.add.at(dvalues, indices[mask], dgathered[mask])
    return dvalues


class FcsNet(CorrespondenceNet):
    """FC16 + FCS100 + FCS150 + FCS200 + FC256 + FC(C), for fixed-length
    spirals of `spec.seq_len` vertices. Batches must hold every vertex of one
    mesh, in any row order, since the second and third FCS layers re-gather
    along the spirals."""

    @classmethod
    def param_shapes(cls, spec: NetworkSpec) -> Dict[str, Tuple[int, ...]]:
        head, tail = cls._io_shapes(spec)
        shapes = dict(head)
        w, n = spec.widths, spec.seq_len
        assert n is not None
        for layer, (din, dout) in enumerate(zip(w[0:3], w[1:4]), start=1):
            shapes[f"fcs{layer}.W"] = (n * din, dout)
            shapes[f"fcs{layer}.b"] = (dout,)
        shapes.update(tail)
        return shapes

    def _check_batch(self, batch: SerializedBatch) -> None:
        super()._check_batch(batch)
        if batch.seq_len != self.spec.seq_len:
            raise ValidationError(
                f"fcs network expects sequences of {self.spec.seq_len} steps, got {batch.seq_len}"
            )
        rows = len(batch.indices)
        centers = np.sort(batch.indices[:, 0])
        if not np.array_equal(centers, np.arange(rows)) or batch.indices[batch.pad_mask].max() >= rows:
            raise ValidationError("fcs networks need whole-mesh batches, one row per vertex")

    @staticmethod
    def _batch_rows(batch: SerializedBatch) -> np.ndarray:
        """`indices` with every vertex id replaced by the batch row holding
        that vertex's spiral; padded steps keep PAD."""
        row_of = np.empty(len(batch.indices), dtype=np.int64)
        row_of[batch.indices[:, 0]] = np.arange(len(batch.indices))
        return np.where(batch.pad_mask, row_of[np.where(batch.pad_mask, batch.indices, 0)], PAD)

    def _encode(self, steps: Tensor, cache: ForwardCache) -> Tensor:
        batch = cache.batch
        rows = len(steps)
        cache.values["rows"] = gather = self._batch_rows(batch)
        layers: List[Tuple[Tensor, Tensor]] = []
        sequence = steps
        for layer in (1, 2, 3):
            flat = sequence.reshape(rows, -1)
            z = fc_forward(flat, self.params[f"fcs{layer}.W"], self.params[f"fcs{layer}.b"])
            layers.append((flat, z))
            out = relu(z)
            sequence = gather_rows(out, gather, batch.pad_mask)
        cache.values["fcs"] = layers
        return out

    def _encode_backward(self, dcode: Tensor, cache: ForwardCache, grads: ParamStore) -> Tensor:
        batch = cache.batch
        gather = cache.values["rows"]
        rows, n = gather.shape
        dout = dcode
        dsequence = None
        for layer in (3, 2, 1):
            flat, z = cache.values["fcs"][layer - 1]
            dflat, grads[f"fcs{layer}.W"], grads[f"fcs{layer}.b"] = fc_backward(
                relu_backward(dout, z), flat, self.params[f"fcs{layer}.W"]
            )
            dsequence = dflat.reshape(rows, n, -1)
            if layer > 1:
                dout = gather_rows_backward(dsequence, gather, batch.pad_mask, rows)
        assert dsequence is not None
        return dsequence


NETWORKS: Dict[str, Type[CorrespondenceNet]] = {
    "lstm": LstmNet,
    "fcs": FcsNet,
}


def network_class(spec: NetworkSpec) -> Type[CorrespondenceNet]:
    return NETWORKS[spec.kind]


def build_network(spec: NetworkSpec, rng: np.random.Generator) -> CorrespondenceNet:
    """A freshly initialized network for `spec`."""
    return network_class(spec).build(spec, rng)


def param_breakdown(spec: NetworkSpec) -> Dict[str, int]:
    """Learnable scalars per layer, in layer order."""
    counts: Dict[str, int] = {}
    for name, shape in network_class(spec).param_shapes(spec).items():
        layer = name.split(".")[0]
        counts[layer] = counts.get(layer, 0) + int(np.prod(shape))
    return counts


def count_params(model) -> int:
    """Exact number of learnable scalars of a network or a `NetworkSpec`."""
    if isinstance(model, NetworkSpec):
        return sum(param_breakdown(model).values())
    return model.count_params()
