"""Main entry point for pyspiral, the spiral-serialization correspondence
toolkit."""

import argparse
import sys
from typing import List, Optional, Sequence

from hashbang import Argument, command, subcommands

from .checkpoint import load_checkpoint, load_prediction, save_checkpoint, save_prediction
from .core import RunConfig, load_config
from .evaluation import (
    DEFAULT_RADII,
    evaluate,
    parse_radii,
    robustness_sweep,
    vertex_errors,
    write_curve,
    write_sweep,
    write_vertex_errors,
)
from .features import (
    RAW_KINDS,
    FeatureMatrix,
    convert_table,
    load_descriptors,
    load_labels,
    raw_features,
    save_descriptors,
)
from .ioformat import MESH_FORMATS, PRINTERS, Table, write_table
from .mesh import HalfEdgeMesh, load_mesh, validate_manifold
from .model import KIND_ALIASES, NetworkSpec, count_params, param_breakdown
from .spiral import SpiralTable
from .training import infer, network_grad_check, train_from_config
from .util import (
    NumericError,
    PyspiralError,
    UsageError,
    ValidationError,
    debug,
    default_threads,
)

FEATURE_SOURCES = "a VFEAT1 descriptor file, or raw:position, raw:normal, raw:position+normal"


def _int(value, name: str) -> Optional[int]:
    if value is None:
        return None
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"--{name} expects an integer, got {value!r}") from None


def _float(value, name: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise UsageError(f"--{name} expects a number, got {value!r}") from None


def _threads(value) -> int:
    return _int(value, "threads") or default_threads()


def _feature_paths(features: str) -> List[str]:
    return [] if features.startswith("raw:") else [features]


def _load_features(features: str, mesh: HalfEdgeMesh) -> FeatureMatrix:
    if features.startswith("raw:"):
        kind = features[len("raw:"):]
        if kind not in RAW_KINDS:
            raise UsageError(f"unknown raw feature kind {kind!r}; expected {FEATURE_SOURCES}")
        return raw_features(mesh, kind)
    return load_descriptors(features, mesh)


@command(
    Argument("mesh_format", choices=list(MESH_FORMATS)),
    formatter_class=argparse.RawDescriptionHelpFormatter,
)
def validate_mesh(mesh, *, mesh_format=None):
    """
    Checks that a mesh is a consistently oriented 2-manifold (with boundary).

    Prints one `severity<TAB>element<TAB>message` line per violation, then a
    summary line. Exits with status 4 if any error-level violation is found;
    isolated vertices are reported as warnings only.
    """
    RunConfig("validate-mesh", inputs=[mesh]).validate()
    loaded = load_mesh(mesh, mesh_format, check=False)
    report = validate_manifold(loaded)
    for line in report.lines():
        print(line)
    print(
        f"vertices={loaded.num_vertices} faces={loaded.num_faces} "
        f"edges={loaded.num_edges} euler={loaded.euler_characteristic()}"
    )
    if not report.ok:
        errors = sum(1 for v in report if v.severity == "error")
        raise ValidationError(f"{mesh}: {errors} manifold violations")


@command(
    Argument("n", aliases=("N",)),
    Argument("output_format", choices=list(PRINTERS)),
    formatter_class=argparse.RawDescriptionHelpFormatter,
)
def spiral_dump(mesh, *, n=None, k=None, seed=None, out=None, output_format="txt", threads=None):
    """
    Prints the spiral of every vertex, one `v: id id id ...` line per vertex.

    Pass exactly one of `--n` (fixed-length spirals, padded with -1) or `--k`
    (whole rings 0..k). Spiral starts are drawn per vertex from `--seed`.
    """
    seed = _int(seed, "seed")
    RunConfig(
        "spiral-dump", inputs=[mesh], outputs=[out] if out else [], seed=seed,
        threads=_int(threads, "threads"),
    ).validate()
    n, k = _int(n, "n"), _int(k, "k")
    if (n is None) == (k is None):
        raise UsageError("pass exactly one of --n or --k")
    table = SpiralTable(load_mesh(mesh), seq_len=n, rings=k)
    spirals = table.draw(seed, _threads(threads))
    rows = ([f"{v}:", *spiral.vertices] for v, spiral in enumerate(spirals))
    write_table(Table(rows), out, output_format)


@command(
    Argument("action", choices=["convert", "raw"]),
    Argument("kind", choices=list(RAW_KINDS)),
    formatter_class=argparse.RawDescriptionHelpFormatter,
)
def features(action, source, out, *, name="descriptor", kind="position", mesh=None, threads=None):
    """
    Writes VFEAT1 descriptor files.

    `features convert TABLE OUT` converts a whitespace- or comma-separated
    table (one row per vertex, `#` comments allowed) to VFEAT1; with `--mesh`
    the row count is checked against the mesh.
    `features raw MESH OUT --kind position|normal|position+normal` writes the
    raw geometric descriptors of a mesh.
    Both actions are vectorized; `--threads` is validated but the output never
    depends on it.
    """
    RunConfig(
        "features", inputs=[source] + ([mesh] if mesh else []), outputs=[out],
        threads=_int(threads, "threads"),
    ).validate()
    if action == "raw":
        save_descriptors(raw_features(load_mesh(source), kind), out)
        return
    matrix = convert_table(source, out, name)
    if mesh:
        loaded = load_mesh(mesh)
        if matrix.num_vertices != loaded.num_vertices:
            raise ValidationError(
                f"{source}: {matrix.num_vertices} rows but {mesh} has {loaded.num_vertices} vertices"
            )
    debug(f"Wrote {matrix.num_vertices}x{matrix.dim} descriptors to {out}")


@command(formatter_class=argparse.RawDescriptionHelpFormatter)
def train(*, config=None, out=None, seed=None, epochs=None, threads=None):
    """
    Trains a network on the dataset named in a key=value config file.

    Config keys: seed, epochs, lr, beta1, beta2 (or betas=b1,b2), epsilon,
    seq_len (or N), augment, normalize, distance (euclidean|geodesic),
    net (lstm|fcs), widths, dropout, forget_bias, classes, dataset,
    train_count, val_count, threads.

    The dataset manifest lists one `<mesh> <descriptors|raw:kind> <labels>`
    line per shape. The first train_count shapes are used for training, the
    last val_count of them for validation. The best epoch is saved to `--out`.
    """
    if config is None or out is None:
        raise UsageError("train needs --config and --out")
    overrides = {"seed": _int(seed, "seed"), "epochs": _int(epochs, "epochs"),
                 "threads": _int(threads, "threads")}
    loaded = load_config(config, **overrides)
    inputs = [config] + ([loaded.dataset] if loaded.dataset else [])
    RunConfig("train", inputs=inputs, outputs=[out], seed=loaded.seed).validate()
    checkpoint = train_from_config(loaded)
    save_checkpoint(checkpoint, out)
    print(f"epoch={checkpoint.meta['epoch']} score={checkpoint.meta['score']!r}")


@command(formatter_class=argparse.RawDescriptionHelpFormatter)
def infer_command(
    mesh, *, checkpoint=None, seed=None, out=None, features="raw:position", rings=None,
    threads=None,
):
    """
    Predicts the template vertex of every vertex of a mesh.

    Writes `source target` lines to `--out` (stdout by default). `--features`
    is a VFEAT1 file or raw:<kind>. `--rings K` makes an lstm network read
    whole rings 0..K instead of its trained sequence length.
    """
    seed = _int(seed, "seed")
    if checkpoint is None:
        raise UsageError("infer needs --checkpoint")
    RunConfig(
        "infer", inputs=[mesh, checkpoint, *_feature_paths(features)],
        outputs=[out] if out else [], seed=seed, threads=_int(threads, "threads"),
    ).validate()
    loaded = load_mesh(mesh)
    prediction = infer(
        load_checkpoint(checkpoint), loaded, _load_features(features, loaded), seed,
        rings=_int(rings, "rings"), threads=_threads(threads),
    )
    if out is None:
        write_table(Table(enumerate(prediction.targets.tolist())), None, "txt")
    else:
        save_prediction(prediction, out)


@command(formatter_class=argparse.RawDescriptionHelpFormatter)
def eval_command(
    *, pred=None, gt=None, mesh=None, radii=DEFAULT_RADII, out=None, errors_out=None, threads=None,
):
    """
    Scores a prediction file against ground truth on the target mesh.

    `--pred` and `--gt` hold one `source target` line per source vertex; the
    source may have any vertex count, targets index `--mesh`. Writes the
    geodesic error curve as CSV (`radius,fraction` plus a trailing
    `# auc=<value>` line). Radii are normalized by the square root of the
    target surface area; `--radii` is `start:stop:step` or a comma list.
    `--errors_out` also writes the per-vertex errors as `vertex,error` CSV.
    """
    if pred is None or gt is None or mesh is None:
        raise UsageError("eval needs --pred, --gt and --mesh")
    outputs = [path for path in (out, errors_out) if path]
    RunConfig("eval", inputs=[pred, gt, mesh], outputs=outputs,
              threads=_int(threads, "threads")).validate()
    grid = parse_radii(radii)
    target = load_mesh(mesh)
    prediction = load_prediction(pred)
    truth = load_labels(gt, len(prediction.targets))
    workers = _threads(threads)
    write_curve(evaluate(prediction, truth, target, grid, workers), out)
    if errors_out:
        write_vertex_errors(vertex_errors(prediction, truth, target, workers), errors_out)


@command(formatter_class=argparse.RawDescriptionHelpFormatter)
def sweep(
    mesh, *, checkpoint=None, gt=None, runs="100", seed=None, features="raw:position",
    target_mesh=None, radii=DEFAULT_RADII, out=None, threads=None,
):
    """
    Repeats inference with `--runs` different spiral-start seeds and writes the
    per-radius spread of the curves as CSV `radius,mean,min,max`.

    Run `i` uses the seed derive_seed(seed, i). `--target_mesh` is the template
    that `--gt` indexes; it is required unless the mesh is the template itself.
    """
    seed = _int(seed, "seed")
    if checkpoint is None or gt is None:
        raise UsageError("sweep needs --checkpoint and --gt")
    inputs = [mesh, checkpoint, gt, *_feature_paths(features)] + ([target_mesh] if target_mesh else [])
    RunConfig(
        "sweep", inputs=inputs, outputs=[out] if out else [], seed=seed,
        threads=_int(threads, "threads"),
    ).validate()
    loaded = load_mesh(mesh)
    result = robustness_sweep(
        load_checkpoint(checkpoint),
        loaded,
        _load_features(features, loaded),
        load_labels(gt, loaded.num_vertices),
        _int(runs, "runs"),
        seed,
        parse_radii(radii),
        target_mesh=load_mesh(target_mesh) if target_mesh else None,
        threads=_threads(threads),
    )
    write_sweep(result, out)
    debug(f"max spread across {len(result.curves)} runs: {result.spread}")


@command(
    Argument("net", choices=list(KIND_ALIASES)),
    Argument("input_dim", aliases=("input-dim",)),
    Argument("seq_len", aliases=("seq-len",)),
    formatter_class=argparse.RawDescriptionHelpFormatter,
)
def param_count(*, net="lstm", input_dim="544", seq_len=None, classes="6890", breakdown=False):
    """
    Prints the number of learnable parameters of a network.

    `--seq_len` is required for fcs networks. With `--breakdown`, one
    `layer count` line per layer precedes the total.
    """
    spec = NetworkSpec(
        net, _int(input_dim, "input_dim"), _int(classes, "classes"), _int(seq_len, "seq_len")
    )
    if breakdown:
        write_table(Table(param_breakdown(spec).items()), None, "txt")
    print(count_params(spec))


@command(
    Argument("net", choices=list(KIND_ALIASES)),
    formatter_class=argparse.RawDescriptionHelpFormatter,
)
def grad_check(*, net="lstm", seed=None, tolerance="1e-4", max_entries="20"):
    """
    Compares the analytic gradients of a reduced-width network against
    central finite differences on a built-in 10-vertex strip. Prints the
    worst relative error per parameter block; exits with status 5 if any
    exceeds `--tolerance`.
    """
    seed = _int(seed, "seed")
    RunConfig("grad-check", seed=seed).validate()
    report = network_grad_check(
        net, seed, _float(tolerance, "tolerance"), max_entries=_int(max_entries, "max_entries")
    )
    for line in report.lines():
        print(line)
    if not report.passed:
        raise NumericError(
            f"gradient check failed: max relative error {report.max_error:.3e} > {report.tolerance}"
        )


COMMANDS = {
    "validate-mesh": validate_mesh,
    "spiral-dump": spiral_dump,
    "features": features,
    "train": train,
    "infer": infer_command,
    "eval": eval_command,
    "sweep": sweep,
    "param-count": param_count,
    "grad-check": grad_check,
}


@command.delegator
def _command_line(subcommand, *_REMAINDER_):
    """
    pyspiral - spiral serialization of mesh neighborhoods for learning
    dense shape correspondences.

    Every stochastic command takes `--seed`; all random choices derive from
    it, and `--threads 1` runs are byte-for-byte reproducible.

    Exit codes: 0 ok, 2 usage, 3 input/output, 4 validation, 5 numeric failure.
    """
    return subcommands(**COMMANDS).execute([subcommand, *_REMAINDER_])


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Runs a pyspiral command line and returns its exit code. Failures are
    reported as a single `pyspiral: error: <message>` line on stderr."""
    args = list(sys.argv[1:] if argv is None else argv)
    try:
        _command_line.execute(args)
    except SystemExit as exc:
        if exc.code is None or isinstance(exc.code, int):
            return exc.code or 0
        print(f"pyspiral: error: {exc.code}", file=sys.stderr)
        return UsageError.exit_code
    except PyspiralError as exc:
        print(f"pyspiral: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"pyspiral: error: {exc}", file=sys.stderr)
        return 3
    return 0


def main() -> None:
    sys.exit(run())
