"""Module containing mesh readers/writers and printers for IO formatting."""

import abc
import csv
from dataclasses import dataclass, field
import io
import os
import re
import sys
import typing
from typing import (
    Any,
    Dict,
    Generator,
    Iterable,
    List,
    Optional,
    Sequence,
    TextIO,
    Tuple,
    Union,
)

import numpy as np

from .util import DataFormatError, debug

__all__ = [
    "AbstractMeshReader",
    "ObjReader",
    "PlyReader",
    "MESH_FORMATS",
    "create_reader",
    "guess_format",
    "write_obj",
    "write_ply",
    "Table",
    "Printer",
    "TxtPrinter",
    "CsvPrinter",
    "new_printer",
    "PRINTERS",
]

RawMesh = Tuple[np.ndarray, np.ndarray]


class AbstractMeshReader(abc.ABC):
    """A reader to be extended by concrete mesh format implementations.

    Implementations return the raw `(positions, faces)` arrays; topology checks
    are left to `HalfEdgeMesh`."""

    @abc.abstractmethod
    def read(self, stream: typing.BinaryIO) -> RawMesh:
        """Reads `(positions V×3 float64, faces F×3 int64)` from the stream."""
        raise NotImplementedError()

    @staticmethod
    def _check_indices(faces: np.ndarray, num_vertices: int) -> np.ndarray:
        if faces.size and (faces.min() < 0 or faces.max() >= num_vertices):
            bad = int(np.argmax((faces < 0).any(axis=1) | (faces >= num_vertices).any(axis=1)))
            raise DataFormatError(
                f"face {bad} references a vertex index out of range "
                f"(mesh has {num_vertices} vertices)"
            )
        return faces


class ObjReader(AbstractMeshReader):
    """Reads Wavefront OBJ: `v x y z` and `f i j k` lines with 1-based indices.
    Texture and normal slots (`f 1/2/3 ...`) are ignored, as are all other
    statements."""

    def read(self, stream: typing.BinaryIO) -> RawMesh:
        positions: List[Tuple[float, float, float]] = []
        faces: List[Tuple[int, int, int]] = []
        for lineno, raw in enumerate(stream, start=1):
            line = raw.decode("utf-8", errors="replace").strip()
            if not line or line.startswith("#"):
                continue
            keyword, *fields = line.split()
            try:
                if keyword == "v":
                    if len(fields) < 3:
                        raise ValueError("expected 3 coordinates")
                    positions.append(tuple(float(x) for x in fields[:3]))  # type: ignore
                elif keyword == "f":
                    if len(fields) != 3:
                        raise DataFormatError(
                            f"line {lineno}: non-triangle face with {len(fields)} vertices"
                        )
                    faces.append(tuple(int(f.split("/")[0]) - 1 for f in fields))  # type: ignore
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: cannot parse {line!r} ({exc})") from None
        debug(f"obj: {len(positions)} vertices, {len(faces)} faces")
        vertices = np.array(positions, dtype=np.float64).reshape(-1, 3)
        triangles = np.array(faces, dtype=np.int64).reshape(-1, 3)
        return vertices, self._check_indices(triangles, len(vertices))


_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass
class _PlyElement:
    name: str
    count: int
    # (name, type) for scalars, (name, (count_type, item_type)) for lists
    properties: List[Tuple[str, Union[str, Tuple[str, str]]]] = field(default_factory=list)


class PlyReader(AbstractMeshReader):
    """Reads PLY files in `ascii` or `binary_little_endian` encoding.

    The vertex element must carry `x`, `y`, `z` scalar properties; the face
    element must carry one list property of vertex indices and every face must
    be a triangle. Other elements are skipped."""

    def read(self, stream: typing.BinaryIO) -> RawMesh:
        encoding, elements = self._read_header(stream)
        vertices: Optional[np.ndarray] = None
        faces: Optional[np.ndarray] = None
        for element in elements:
            if encoding == "ascii":
                data = self._read_ascii(stream, element)
            else:
                data = self._read_binary(stream, element)
            if element.name == "vertex":
                vertices = data
            elif element.name == "face":
                faces = data
        if vertices is None:
            raise DataFormatError("PLY file has no vertex element")
        if faces is None:
            faces = np.zeros((0, 3), dtype=np.int64)
        debug(f"ply ({encoding}): {len(vertices)} vertices, {len(faces)} faces")
        return vertices, self._check_indices(faces, len(vertices))

    @staticmethod
    def _read_header(stream: typing.BinaryIO) -> Tuple[str, List[_PlyElement]]:
        if stream.readline().strip() != b"ply":
            raise DataFormatError("not a PLY file (missing 'ply' magic)")
        encoding = None
        elements: List[_PlyElement] = []
        while True:
            raw = stream.readline()
            if not raw:
                raise DataFormatError("PLY header is not terminated by 'end_header'")
            words = raw.decode("ascii", errors="replace").split()
            if not words or words[0] in ("comment", "obj_info"):
                continue
            if words[0] == "end_header":
                break
            if words[0] == "format":
                encoding = words[1]
                if encoding not in ("ascii", "binary_little_endian"):
                    raise DataFormatError(f"unsupported PLY encoding {encoding!r}")
            elif words[0] == "element":
                elements.append(_PlyElement(words[1], int(words[2])))
            elif words[0] == "property":
                if not elements:
                    raise DataFormatError("PLY property declared before any element")
                try:
                    if words[1] == "list":
                        elements[-1].properties.append(
                            (words[4], (_PLY_TYPES[words[2]], _PLY_TYPES[words[3]]))
                        )
                    else:
                        elements[-1].properties.append((words[2], _PLY_TYPES[words[1]]))
                except (KeyError, IndexError):
                    raise DataFormatError(f"malformed PLY property line {raw!r}") from None
            else:
                raise DataFormatError(f"unexpected PLY header line {raw!r}")
        if encoding is None:
            raise DataFormatError("PLY header has no format line")
        return encoding, elements

    @staticmethod
    def _vertex_columns(element: _PlyElement) -> List[int]:
        names = [name for name, _ in element.properties]
        try:
            return [names.index(axis) for axis in ("x", "y", "z")]
        except ValueError:
            raise DataFormatError("PLY vertex element lacks x/y/z properties") from None

    def _read_ascii(self, stream: typing.BinaryIO, element: _PlyElement) -> Optional[np.ndarray]:
        rows = []
        for i in range(element.count):
            raw = stream.readline()
            if not raw:
                raise DataFormatError(f"PLY {element.name} element truncated at row {i}")
            rows.append(raw.split())
        if element.name == "vertex":
            columns = self._vertex_columns(element)
            try:
                return np.array(
                    [[float(row[c]) for c in columns] for row in rows], dtype=np.float64
                ).reshape(-1, 3)
            except (ValueError, IndexError):
                raise DataFormatError("malformed PLY vertex row") from None
        if element.name == "face":
            faces = []
            for i, row in enumerate(rows):
                try:
                    count = int(row[0])
                    if count == 3:
                        faces.append([int(x) for x in row[1:4]])
                except (ValueError, IndexError):
                    raise DataFormatError(f"malformed PLY face row {i}") from None
                if count != 3:
                    raise DataFormatError(f"face {i}: non-triangle face with {count} vertices")
            return np.array(faces, dtype=np.int64).reshape(-1, 3)
        return None

    def _read_binary(self, stream: typing.BinaryIO, element: _PlyElement) -> Optional[np.ndarray]:
        has_list = any(isinstance(kind, tuple) for _, kind in element.properties)
        if not has_list:
            dtype = np.dtype([(name, "<" + kind) for name, kind in element.properties])  # type: ignore
            buffer = stream.read(dtype.itemsize * element.count)
            if len(buffer) != dtype.itemsize * element.count:
                raise DataFormatError(f"PLY {element.name} element truncated")
            table = np.frombuffer(buffer, dtype=dtype, count=element.count)
            if element.name == "vertex":
                self._vertex_columns(element)
                return np.stack([table[a].astype(np.float64) for a in "xyz"], axis=1)
            return None
        if element.name != "face" or len(element.properties) != 1:
            raise DataFormatError(f"unsupported list layout in PLY element {element.name!r}")
        _, (count_type, item_type) = element.properties[0]  # type: ignore
        dtype = np.dtype([("n", "<" + count_type), ("i", "<" + item_type, 3)])
        buffer = stream.read(dtype.itemsize * element.count)
        if len(buffer) != dtype.itemsize * element.count:
            raise DataFormatError("PLY face element truncated or contains non-triangle faces")
        table = np.frombuffer(buffer, dtype=dtype, count=element.count)
        not_triangles = np.flatnonzero(table["n"] != 3)
        if len(not_triangles):
            # Records before the first bad count are aligned, so its index is exact.
            first = int(not_triangles[0])
            raise DataFormatError(f"face {first}: non-triangle face with {int(table['n'][first])} vertices")
        return table["i"].astype(np.int64)


MESH_FORMATS: Dict[str, typing.Callable[[], AbstractMeshReader]] = {
    "obj": ObjReader,
    "ply": PlyReader,
    "ply-ascii": PlyReader,
    "ply-binary-little-endian": PlyReader,
}


def create_reader(mesh_format: str) -> AbstractMeshReader:
    """Creates a mesh reader from the given `mesh_format`."""
    try:
        return MESH_FORMATS[mesh_format]()
    except KeyError as exc:
        raise DataFormatError(f"Unknown mesh format {mesh_format}") from exc


def guess_format(path: Union[str, os.PathLike]) -> str:
    """Guesses the mesh format from the file extension."""
    extension = os.path.splitext(os.fspath(path))[1].lower().lstrip(".")
    if extension not in MESH_FORMATS:
        raise DataFormatError(f"Cannot infer the mesh format of {os.fspath(path)!r}; pass --mesh_format")
    return extension


def write_obj(stream: TextIO, positions: np.ndarray, faces: np.ndarray) -> None:
    for x, y, z in positions.tolist():
        stream.write(f"v {x!r} {y!r} {z!r}\n")
    for i, j, k in (faces + 1).tolist():
        stream.write(f"f {i} {j} {k}\n")


def write_ply(stream: TextIO, positions: np.ndarray, faces: np.ndarray) -> None:
    stream.write(
        "ply\nformat ascii 1.0\n"
        f"element vertex {len(positions)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {len(faces)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    for x, y, z in positions.tolist():
        stream.write(f"{x!r} {y!r} {z!r}\n")
    for i, j, k in faces.tolist():
        stream.write(f"3 {i} {j} {k}\n")


@dataclass
class Table:
    """A result to be printed: an optional header row, the rows, and trailing
    comment lines (printed as `# <comment>`)."""

    rows: Iterable[Sequence[Any]]
    header: Optional[Sequence[str]] = None
    comments: Sequence[str] = ()


class Printer(abc.ABC):
    """A printer that defines how to turn a `Table` into output text."""

    def format_value(self, value: Any) -> str:
        """Formats a single cell. Floats use `repr` so that outputs are exact
        and byte-identical across runs."""
        if isinstance(value, str):
            return value
        if isinstance(value, (bool, np.bool_)):
            return str(bool(value)).lower()
        if isinstance(value, (float, np.floating)):
            return repr(float(value))
        if isinstance(value, np.integer):
            return str(int(value))
        return str(value)

    def format_record(self, record: Sequence[Any]) -> List[str]:
        """Formats a record, which is a sequence of fields."""
        return [self.format_value(v) for v in record]

    def print_result(self, result: Table, stream: Optional[TextIO] = None):
        """Writes the table to `stream` (stdout by default)."""
        stream = stream or sys.stdout
        for chunk in self.gen_result(result):
            stream.write(chunk)
        stream.flush()

    def to_string(self, result: Table) -> str:
        out = io.StringIO()
        self.print_result(result, out)
        return out.getvalue()

    @abc.abstractmethod
    def gen_result(self, result: Table) -> Generator[str, None, None]:
        """Generates the output text, possibly in several chunks."""
        raise NotImplementedError()


class TxtPrinter(Printer):
    """A printer that prints out the results in a space-separated format,
    similar to AWK."""

    def __init__(self, field_separator: str = " "):
        self.record_separator = "\n"
        self.field_separator = field_separator

    def gen_result(self, result: Table) -> Generator[str, None, None]:
        if result.header is not None:
            yield self.field_separator.join(result.header) + self.record_separator
        for record in result.rows:
            yield self.field_separator.join(self.format_record(record)) + self.record_separator
        for comment in result.comments:
            yield f"# {comment}" + self.record_separator


class CsvPrinter(Printer):
    """A printer that prints out the results in CSV format."""

    def __init__(self, *, delimiter=","):
        self.delimiter = delimiter

    def gen_result(self, result: Table) -> Generator[str, None, None]:
        output = io.StringIO()
        writer = csv.writer(output, delimiter=self.delimiter, lineterminator="\n")
        if result.header is not None:
            writer.writerow(result.header)
            yield self._pop_value(output)
        for record in result.rows:
            writer.writerow(self.format_record(record))
            yield self._pop_value(output)
        for comment in result.comments:
            yield f"# {comment}\n"

    def _pop_value(self, stringio):
        value = stringio.getvalue()
        stringio.seek(0)
        stringio.truncate(0)
        return value


PRINTERS = {
    "txt": TxtPrinter,
    "tsv": lambda: TxtPrinter(field_separator="\t"),
    "csv": CsvPrinter,
}


def new_printer(output_format: str) -> Printer:
    """Creates a new printer with the given output format."""
    return PRINTERS[output_format]()


def write_table(result: Table, path: Optional[str], output_format: str) -> None:
    """Prints `result` to the file at `path`, or to stdout if `path` is None."""
    printer = new_printer(output_format)
    if path is None:
        printer.print_result(result)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        printer.print_result(result, out)


def read_int_rows(path: str) -> List[List[int]]:
    """Reads a whitespace separated table of integers, skipping blank and `#`
    lines."""
    rows = []
    with open(path, "rb") as stream:
        for lineno, raw in enumerate(stream, start=1):
            line = raw.decode("utf-8", errors="replace").strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([int(x) for x in re.split(r"[ \t,]+", line)])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: expected integers, got {line!r}") from None
    return rows
