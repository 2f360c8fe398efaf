"""Training and inference.

Every random choice is derived from the configured seed with
`derive_seed(seed, stream, epoch, mesh_index)`, one stream per purpose:
shuffling the mesh order, drawing spiral starts, dropout masks and the fixed
spiral starts of the validation meshes. Re-running with the same seed and one
thread reproduces the same checkpoint byte for byte.
"""

import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from .checkpoint import Checkpoint
from .core import ManifestEntry, TrainConfig, read_manifest
from .engine import AdamState, GradCheckReport, adam_step, cross_entropy, grad_check, softmax
from .features import (
    FeatureMatrix,
    Normalizer,
    SerializedBatch,
    load_descriptors,
    load_labels,
    raw_features,
    serialize_batch,
)
from .mesh import HalfEdgeMesh, load_mesh
from .primitives import grid
from .model import CorrespondenceNet, NetworkSpec, Prediction, build_network
from .spiral import SpiralTable
from .util import NumericError, ValidationError, debug, derive_seed, parallel_map

SHUFFLE_STREAM = 0
SPIRAL_STREAM = 1
DROPOUT_STREAM = 2
VALIDATION_STREAM = 3

T = TypeVar("T")


@dataclass
class Sample:
    """One training or evaluation shape: a mesh, its per-vertex descriptors
    and the template vertex of every mesh vertex."""

    mesh: HalfEdgeMesh
    features: FeatureMatrix
    labels: np.ndarray
    name: str = ""

    def __post_init__(self):
        if len(self.labels) != self.mesh.num_vertices:
            raise ValidationError(
                f"{self.name or 'sample'}: {len(self.labels)} labels for "
                f"{self.mesh.num_vertices} vertices"
            )
        if self.features.num_vertices != self.mesh.num_vertices:
            raise ValidationError(
                f"{self.name or 'sample'}: {self.features.num_vertices} descriptor rows for "
                f"{self.mesh.num_vertices} vertices"
            )


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float
    val_loss: Optional[float] = None
    val_accuracy: Optional[float] = None
    seconds: float = 0.0

    @property
    def score(self) -> float:
        """The checkpoint selection score: validation loss when there is a
        validation set, training loss otherwise."""
        return self.loss if self.val_loss is None else self.val_loss


def split_dataset(
    items: Sequence[T], train_count: int = 80, val_count: int = 10
) -> Tuple[List[T], List[T], List[T]]:
    """Splits an ordered dataset into `(train, validation, test)`: the first
    `train_count` items are used for training, of which the last `val_count`
    are held out for validation; the rest is the test set."""
    if not 0 <= val_count <= train_count:
        raise ValidationError("val_count must lie in [0, train_count]")
    fit = train_count - val_count
    return list(items[:fit]), list(items[fit:train_count]), list(items[train_count:])


def load_sample(entry: ManifestEntry, *, check: bool = True) -> Sample:
    mesh = load_mesh(entry.mesh, check=check)
    if entry.raw_kind:
        features = raw_features(mesh, entry.raw_kind)
    else:
        features = load_descriptors(entry.features, mesh)
    return Sample(mesh, features, load_labels(entry.labels, mesh.num_vertices), entry.mesh)


def load_dataset(manifest: str, threads: Optional[int] = 1) -> List[Sample]:
    """Loads every shape listed in a dataset manifest, in manifest order."""
    return parallel_map(load_sample, read_manifest(manifest), threads)


def network_spec(config: TrainConfig, feature_dim: int, classes: int) -> NetworkSpec:
    return NetworkSpec(
        config.net,
        feature_dim + (2 if config.augment else 0),
        config.classes or classes,
        config.seq_len,
        config.widths or (),
        config.dropout,
        config.forget_bias,
    )


def _check_samples(samples: Sequence[Sample], spec: NetworkSpec) -> None:
    for sample in samples:
        labels = sample.labels
        if labels.min() < 0 or labels.max() >= spec.classes:
            raise ValidationError(
                f"{sample.name or 'sample'}: labels must lie in [0, {spec.classes}), "
                f"found [{labels.min()}, {labels.max()}]"
            )


def _evaluate_loss(
    model: CorrespondenceNet, batches: Sequence[Tuple[SerializedBatch, np.ndarray]]
) -> Tuple[float, float]:
    losses, correct, total = [], 0, 0
    for batch, labels in batches:
        logits, _ = model.forward(batch)
        probs = softmax(logits)
        losses.append(cross_entropy(probs, labels))
        correct += int(np.sum(probs.argmax(axis=1) == labels))
        total += len(labels)
    return float(np.mean(losses)), correct / total


def train(
    model: CorrespondenceNet,
    dataset: Sequence[Sample],
    config: TrainConfig,
    validation: Sequence[Sample] = (),
    *,
    on_epoch: Optional[Callable[[EpochStats], None]] = None,
) -> Checkpoint:
    """Trains `model` in place with one mesh per batch and one Adam step per
    mesh, and returns the checkpoint of the best epoch.

    Every epoch visits the meshes in a freshly shuffled order and draws fresh
    random spiral starts for every vertex."""
    if not dataset:
        raise ValidationError("cannot train on an empty dataset")
    seed = config.require_seed()
    spec = model.spec
    _check_samples(list(dataset) + list(validation), spec)
    normalizer = Normalizer.fit([s.features for s in dataset]) if config.normalize else None
    table_args = {"seq_len": config.seq_len}
    tables = [SpiralTable(s.mesh, **table_args) for s in dataset]

    def batch_of(sample: Sample, table: SpiralTable, batch_seed: int) -> SerializedBatch:
        return serialize_batch(
            sample.mesh, sample.features, config.seq_len, batch_seed, config.augment,
            table=table, normalizer=normalizer, distance=config.distance,
            threads=config.threads,
        )

    validation_batches = [
        (batch_of(s, SpiralTable(s.mesh, **table_args), derive_seed(seed, VALIDATION_STREAM, i)),
         s.labels)
        for i, s in enumerate(validation)
    ]
    adam = AdamState(config.lr, config.beta1, config.beta2, config.epsilon)
    best: Optional[Checkpoint] = None
    best_score = np.inf
    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = np.random.default_rng(derive_seed(seed, SHUFFLE_STREAM, epoch)).permutation(
            len(dataset)
        )
        losses, correct, total = [], 0, 0
        for index in order.tolist():
            sample = dataset[index]
            batch = batch_of(sample, tables[index], derive_seed(seed, SPIRAL_STREAM, epoch, index))
            rng = np.random.default_rng(derive_seed(seed, DROPOUT_STREAM, epoch, index))
            loss, grads, probs = model.loss_and_grads(batch, sample.labels, train=True, rng=rng)
            if not np.isfinite(loss):
                raise NumericError(f"loss became {loss} in epoch {epoch} on {sample.name or index}")
            adam_step(model.params, grads, adam)
            losses.append(loss)
            correct += int(np.sum(probs.argmax(axis=1) == sample.labels))
            total += len(sample.labels)
        stats = EpochStats(epoch, float(np.mean(losses)), correct / total)
        if validation_batches:
            stats.val_loss, stats.val_accuracy = _evaluate_loss(model, validation_batches)
        stats.seconds = time.perf_counter() - started
        debug(
            f"epoch {epoch}: loss={stats.loss:.6f} accuracy={stats.accuracy:.4f}"
            + (
                f" val_loss={stats.val_loss:.6f} val_accuracy={stats.val_accuracy:.4f}"
                if stats.val_loss is not None
                else ""
            )
            + f" ({stats.seconds:.2f}s)"
        )
        if on_epoch is not None:
            on_epoch(stats)
        if stats.score < best_score:
            best_score = stats.score
            meta = {"seed": seed, "epoch": epoch, "score": stats.score, "accuracy": stats.accuracy}
            if stats.val_accuracy is not None:
                meta["val_accuracy"] = stats.val_accuracy
            best = Checkpoint(
                spec, model.params.copy(), adam.copy(), normalizer,
                config.augment, config.distance, meta,
            )
    assert best is not None
    return best


def train_from_config(config: TrainConfig) -> Checkpoint:
    """Loads the configured dataset, splits it and trains a new network."""
    if not config.dataset:
        raise ValidationError("the config names no dataset")
    seed = config.require_seed()
    samples = load_dataset(config.dataset, config.threads)
    training, validation, test = split_dataset(samples, config.train_count, config.val_count)
    if not training:
        raise ValidationError(f"{config.dataset}: no training shapes")
    debug(f"{len(training)} training, {len(validation)} validation, {len(test)} test shapes")
    classes = max(int(s.labels.max()) for s in training + validation) + 1
    spec = network_spec(config, training[0].features.dim, classes)
    model = build_network(spec, np.random.default_rng(derive_seed(seed)))
    return train(model, training, config, validation)


def infer(
    checkpoint: Checkpoint,
    mesh: HalfEdgeMesh,
    features: FeatureMatrix,
    seed: int,
    *,
    rings: Optional[int] = None,
    keep_probabilities: bool = False,
    threads: Optional[int] = 1,
) -> Prediction:
    """Predicts the template vertex of every vertex of `mesh`, with dropout
    disabled and spiral starts drawn from `seed`.

    `rings` switches an LSTM network to variable-length spirals of whole rings
    instead of the trained sequence length."""
    spec = checkpoint.spec
    if features.dim != checkpoint.feature_dim():
        raise ValidationError(
            f"checkpoint expects {checkpoint.feature_dim()}-dimensional descriptors, "
            f"got {features.dim}"
        )
    if rings is not None and spec.kind != "lstm":
        raise ValidationError("ring-based spirals need an lstm network")
    if rings is None and spec.seq_len is None:
        raise ValidationError("the checkpoint has no sequence length; pass a ring count")
    seq_len = spec.seq_len or 0
    if rings is not None:
        table = SpiralTable(mesh, rings=rings)
    else:
        table = SpiralTable(mesh, seq_len=seq_len)
    batch = serialize_batch(
        mesh, features, seq_len, seed, checkpoint.augment,
        table=table, normalizer=checkpoint.normalizer, distance=checkpoint.distance,
        threads=threads,
    )
    return checkpoint.network().predict(batch, keep_probabilities)


def network_grad_check(
    kind: str,
    seed: int,
    tolerance: float = 1e-4,
    *,
    max_entries: Optional[int] = 20,
) -> GradCheckReport:
    """Checks the full backward pass of a reduced-width network against
    finite differences on a 10-vertex strip. The sequences are longer than
    the mesh so that every spiral ends in padding; parameters are drawn at
    random (biases included) to keep activations away from ReLU kinks."""
    mesh = grid(2, 5)
    spec = NetworkSpec(kind, 3 + 2, classes=10, seq_len=12, widths=(8, 6, 6, 6, 8), dropout=0.0)
    rng = np.random.default_rng(derive_seed(seed, 0))
    model = build_network(spec, rng)
    for param in model.params.values():
        param += rng.normal(0.0, 0.5, param.shape)
    batch = serialize_batch(mesh, raw_features(mesh, "position"), 12, derive_seed(seed, 1), True)
    labels = np.arange(mesh.num_vertices)

    def closure(params):
        loss, grads, _ = model.loss_and_grads(batch, labels)
        return loss, grads

    return grad_check(
        closure, model.params, tolerance,
        max_entries=max_entries, rng=np.random.default_rng(derive_seed(seed, 2)),
    )
