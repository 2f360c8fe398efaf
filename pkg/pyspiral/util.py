"""Utility functions."""

import concurrent.futures
import os
import sys
from typing import Any, Callable, Iterable, List, Optional, TypeVar

import numpy as np


def debug(*args: Any) -> None:
    """
    Print a debug statement. These are printed to the console if the $DEBUG env
    var is set
    """
    if os.getenv("DEBUG"):
        print(*args, file=sys.stderr)


class PyspiralError(RuntimeError):
    """Base class for the errors reported by pyspiral commands."""

    exit_code = 1


class UsageError(PyspiralError):
    """The command line or configuration was not understood."""

    exit_code = 2


class DataFormatError(PyspiralError):
    """An input file is missing or does not follow its declared format."""

    exit_code = 3


class ValidationError(PyspiralError):
    """The inputs are well-formed but violate a contract of the operation."""

    exit_code = 4


class NumericError(PyspiralError):
    """A numeric failure: NaN or Inf values, undefined geometry, failed
    gradient checks."""

    exit_code = 5


def check_finite(array: np.ndarray, what: str) -> np.ndarray:
    """Raises `NumericError` if `array` contains NaN or Inf."""
    if not np.all(np.isfinite(array)):
        bad = np.argwhere(~np.isfinite(array))[0]
        raise NumericError(f"{what} contains a non-finite value at index {tuple(bad)}")
    return array


def derive_seed(seed: int, *keys: int) -> int:
    """Derives an independent 32-bit seed from `seed` and a tuple of integer
    keys, e.g. `(epoch, mesh_index)`. The derivation is
    `SeedSequence([seed, *keys]).generate_state(1)[0]`, so it is stable across
    platforms and numpy versions."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def vertex_rng(seed: int, vertex: int) -> np.random.Generator:
    """The generator used for per-vertex random choices (e.g. spiral starts).

    Each vertex gets its own stream so vertices can be processed by any number
    of workers in any order and still produce identical results."""
    return np.random.default_rng(np.random.SeedSequence([seed, vertex]))


def default_threads() -> int:
    """Worker count used when a command is not given `--threads`."""
    return max(1, int(os.getenv("PYSPIRAL_THREADS", "1")))


T = TypeVar("T")
R = TypeVar("R")


def parallel_map(
    func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = 1
) -> List[R]:
    """Maps `func` over `items`, returning results in input order.

    With `threads` of 1 (the default) this is a plain loop, which is the
    bit-reproducible mode. Otherwise the work is spread over a thread pool; the
    output order and therefore any later reduction order stays fixed."""
    threads = threads or default_threads()
    if threads <= 1:
        return [func(item) for item in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
