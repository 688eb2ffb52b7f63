# Plain text edge lists: one `i<TAB>k<TAB>s` similarity or `i<TAB>j` association
# per line, 0-based indices, lines starting with `#` ignored.
import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple, Union

from hybrid_ap.errors import EdgeFileError

logger = logging.getLogger(__name__)

Edge = Union[Tuple[int, int, float], Tuple[int, int]]

SIMILARITY = "similarity"
ASSOCIATION = "association"


@dataclass(frozen=True)
class ParsedEdges:
    edges: List[Edge]
    max_index: int
    max_second_index: int

    @property
    def n_nodes(self) -> int:
        """Smallest node count that covers every index seen"""
        return max(self.max_index, self.max_second_index) + 1


def _parse_index(text: str, path: str, line_no: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise EdgeFileError(f"{path}:{line_no}: '{text}' is not an integer index")
    if value < 0:
        raise EdgeFileError(f"{path}:{line_no}: negative index {value}")
    return value


def _parse_line(line: str, kind: str, path: str, line_no: int) -> Edge:
    fields = line.split("\t")
    expected = 3 if kind == SIMILARITY else 2
    if len(fields) != expected:
        raise EdgeFileError(
            f"{path}:{line_no}: expected {expected} tab-separated fields, "
            f"got {len(fields)}"
        )
    i = _parse_index(fields[0].strip(), path, line_no)
    k = _parse_index(fields[1].strip(), path, line_no)
    if kind == ASSOCIATION:
        return i, k

    try:
        s = float(fields[2])
    except ValueError:
        raise EdgeFileError(
            f"{path}:{line_no}: '{fields[2].strip()}' is not a number"
        )
    if math.isnan(s):
        raise EdgeFileError(f"{path}:{line_no}: similarity is NaN")
    return i, k, s


def parse_edge_file(path: str, kind: str = SIMILARITY) -> ParsedEdges:
    """Read a similarity or association file.

    Raises:
        EdgeFileError: If the file cannot be read or a line is malformed. The
            message names the file and line.
    """
    if kind not in (SIMILARITY, ASSOCIATION):
        raise ValueError(f"Unknown edge file kind '{kind}'")

    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise EdgeFileError(f"Cannot read {path}: {e.strerror}")
    except UnicodeDecodeError:
        raise EdgeFileError(f"{path} is not UTF-8 text")

    edges = []
    max_index = max_second_index = -1
    for line_no, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        edge = _parse_line(line, kind, path, line_no)
        edges.append(edge)
        max_index = max(max_index, edge[0])
        max_second_index = max(max_second_index, edge[1])

    logger.debug(f"Read {len(edges)} {kind} edges from {path}")
    return ParsedEdges(edges, max_index, max_second_index)


def format_edge_file(edges: Iterable[Edge], header: Sequence[str] = ()) -> str:
    """Render edges in the format parse_edge_file reads. Similarities are written
    with repr so they read back exactly."""
    lines = [f"# {text}" for text in header]
    for edge in edges:
        fields = [str(int(edge[0])), str(int(edge[1]))]
        if len(edge) == 3:
            fields.append(repr(float(edge[2])))
        lines.append("\t".join(fields))
    return "\n".join(lines) + "\n"


def write_edge_file(path: str, edges: Iterable[Edge], header: Sequence[str] = ()):
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(format_edge_file(edges, header))
    except OSError as e:
        raise EdgeFileError(f"Cannot write {path}: {e.strerror}")


def read_names(path: str) -> List[str]:
    """One display name per line, line n naming node n - 1"""
    try:
        with open(path, encoding="utf-8") as f:
            return f.read().splitlines()
    except OSError as e:
        raise EdgeFileError(f"Cannot read {path}: {e.strerror}")
    except UnicodeDecodeError:
        raise EdgeFileError(f"{path} is not UTF-8 text")
