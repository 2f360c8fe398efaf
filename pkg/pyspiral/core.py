import dataclasses
import os
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from .features import DISTANCES, RAW_KINDS
from .model import KIND_ALIASES
from .util import UsageError, debug

STOCHASTIC_COMMANDS = ("spiral-dump", "train", "infer", "sweep", "grad-check")


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def _parse_widths(value: str) -> Optional[Tuple[int, ...]]:
    if not value:
        return None
    return tuple(int(w) for w in value.replace(" ", "").split(","))


def _optional_int(value: str) -> Optional[int]:
    return int(value) if value else None


@dataclass
class TrainConfig:
    """Training configuration, read from a flat `key=value` file.

    `seed` has no default: every training run names its seed."""

    seed: Optional[int] = None
    epochs: int = 200
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seq_len: int = 20
    augment: bool = False
    normalize: bool = False
    distance: str = "euclidean"
    net: str = "lstm"
    widths: Optional[Tuple[int, ...]] = None
    dropout: float = 0.3
    forget_bias: float = 0.0
    classes: Optional[int] = None
    dataset: Optional[str] = None
    train_count: int = 80
    val_count: int = 10
    threads: int = 1

    def __post_init__(self):
        if self.net not in KIND_ALIASES:
            raise UsageError(f"net must be lstm or fcs, got {self.net!r}")
        if self.distance not in DISTANCES:
            raise UsageError(f"distance must be one of {', '.join(DISTANCES)}, got {self.distance!r}")
        if self.epochs < 1 or self.seq_len < 1:
            raise UsageError("epochs and seq_len must be positive")
        if self.lr <= 0:
            raise UsageError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise UsageError("beta1 and beta2 must lie in [0, 1)")
        if not 0 <= self.val_count <= self.train_count:
            raise UsageError("val_count must lie in [0, train_count]")

    def require_seed(self) -> int:
        if self.seed is None:
            raise UsageError("training needs a seed (add `seed=<int>` to the config)")
        return self.seed


_CONVERTERS: Dict[str, Callable[[str], Any]] = {
    "seed": int,
    "epochs": int,
    "lr": float,
    "beta1": float,
    "beta2": float,
    "epsilon": float,
    "seq_len": int,
    "augment": _parse_bool,
    "normalize": _parse_bool,
    "distance": str,
    "net": str,
    "widths": _parse_widths,
    "dropout": float,
    "forget_bias": float,
    "classes": _optional_int,
    "dataset": str,
    "train_count": int,
    "val_count": int,
    "threads": int,
}
_ALIASES = {"N": "seq_len", "n": "seq_len", "learning_rate": "lr"}


def parse_config(lines: Sequence[str], source: str = "<config>") -> Dict[str, Any]:
    """Parses `key=value` lines into typed values. `betas=b1,b2` sets both
    Adam decay rates."""
    values: Dict[str, Any] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep:
            raise UsageError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key = _ALIASES.get(key, key)
        try:
            if key == "betas":
                beta1, beta2 = (float(b) for b in value.split(","))
                values.update(beta1=beta1, beta2=beta2)
            elif key in _CONVERTERS:
                values[key] = _CONVERTERS[key](value)
            else:
                raise UsageError(f"{source}:{lineno}: unknown config key {key!r}")
        except ValueError as exc:
            raise UsageError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path: str, **overrides: Any) -> TrainConfig:
    """Reads a `TrainConfig`. Relative dataset paths are resolved against the
    config file's directory; keyword overrides (e.g. from the command line)
    win over the file."""
    with open(path, encoding="utf-8") as stream:
        values = parse_config(stream.read().splitlines(), path)
    if values.get("dataset"):
        values["dataset"] = os.path.join(os.path.dirname(path), values["dataset"])
    values.update({k: v for k, v in overrides.items() if v is not None})
    debug(f"Loaded config {path}: {values}")
    return TrainConfig(**values)


def config_lines(config: TrainConfig) -> List[str]:
    """The `key=value` form of a config, in field order."""
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if value is None:
            continue
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name}={value}")
    return lines


@dataclass(frozen=True)
class ManifestEntry:
    """One shape of a dataset: its mesh, its descriptor source and its
    ground-truth correspondence file."""

    mesh: str
    features: str
    labels: str

    @property
    def raw_kind(self) -> Optional[str]:
        """The raw feature kind for `raw:<kind>` descriptor sources."""
        if self.features.startswith("raw:"):
            return self.features[len("raw:"):]
        return None

    def paths(self) -> List[str]:
        return [self.mesh, self.labels] + ([] if self.raw_kind else [self.features])


def read_manifest(path: str) -> List[ManifestEntry]:
    """Reads a dataset manifest: one `<mesh> <descriptors|raw:kind> <labels>`
    line per shape. Relative paths are resolved against the manifest's
    directory."""
    base = os.path.dirname(path)
    entries = []
    with open(path, encoding="utf-8") as stream:
        for lineno, raw in enumerate(stream, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise UsageError(f"{path}:{lineno}: expected <mesh> <features> <labels>")
            mesh, features, labels = parts
            if features.startswith("raw:"):
                if features[len("raw:"):] not in RAW_KINDS:
                    raise UsageError(f"{path}:{lineno}: unknown raw feature kind {features!r}")
            else:
                features = os.path.join(base, features)
            entries.append(
                ManifestEntry(os.path.join(base, mesh), features, os.path.join(base, labels))
            )
    return entries


@dataclass
class RunConfig:
    """One validated command invocation."""

    subcommand: str
    inputs: Sequence[str] = ()
    outputs: Sequence[str] = ()
    seed: Optional[int] = None
    threads: Optional[int] = None

    def validate(self) -> "RunConfig":
        """Checks every input path and the seed before any work starts."""
        if self.subcommand in STOCHASTIC_COMMANDS and self.seed is None:
            raise UsageError(f"{self.subcommand} needs --seed")
        if self.threads is not None and self.threads < 1:
            raise UsageError(f"--threads must be at least 1, got {self.threads}")
        for path in self.inputs:
            if not os.path.isfile(path):
                raise FileNotFoundError(f"no such file: {path}")
        for path in self.outputs:
            directory = os.path.dirname(path) or "."
            if not os.path.isdir(directory):
                raise FileNotFoundError(f"no such directory: {directory}")
        return self
