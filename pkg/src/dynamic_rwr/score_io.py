"""
Score dump reading and writing.

A dump is a text file of ``node_id score`` lines. Scores are written with
``repr`` so they read back bit-exactly. Lines starting with ``#`` carry
provenance as ``key=value`` tokens.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, TextIO, Union
import io

import numpy as np

from .errors import ParseError

PathLike = Union[str, Path]


@dataclass
class ScoreDump:
    """
    Parsed score dump.

    Attributes:
        node_ids: Node ids in file order
        scores: Scores aligned with ``node_ids``
        metadata: ``key=value`` pairs found in header comments
        tags: Bare header words such as ``rwr-checkpoint``
    """

    node_ids: np.ndarray
    scores: np.ndarray
    metadata: Dict[str, str] = field(default_factory=dict)
    tags: List[str] = field(default_factory=list)

    def as_dense(self) -> np.ndarray:
        """Scores indexed by node id (ids must be exactly ``0..n-1``)."""
        n = self.node_ids.shape[0]
        if n and (sorted(self.node_ids.tolist()) != list(range(n))):
            raise ValueError("score dump node ids are not dense 0..n-1")
        dense = np.zeros(n, dtype=np.float64)
        dense[self.node_ids] = self.scores
        return dense

    def get_float(self, key: str, default: float = 0.0) -> float:
        value = self.metadata.get(key)
        return default if value is None else float(value)

    def get_int(self, key: str, default: int = 0) -> int:
        value = self.metadata.get(key)
        return default if value is None else int(value)


def format_header(metadata: Mapping[str, object], tag: Optional[str] = None) -> str:
    """
    Render one header comment line.

    Args:
        metadata: Ordered ``key=value`` pairs
        tag: Optional bare word written first (``#tag k=v ...``)
    """
    tokens = [f"{key}={_format_value(value)}" for key, value in metadata.items()]
    if tag is not None:
        return "#" + " ".join([tag, *tokens])
    return "# " + " ".join(tokens)


def _format_value(value: object) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_score_dump(
    target: Union[PathLike, TextIO],
    scores: Iterable[float],
    headers: Iterable[str] = (),
) -> None:
    """
    Write ``scores`` (indexed by node id) as a dump.

    Args:
        target: Path or open text stream
        scores: Score per node id
        headers: Pre-formatted header lines (see ``format_header``)
    """
    buffer = io.StringIO()
    for header in headers:
        buffer.write(header.rstrip("\n") + "\n")
    for node, score in enumerate(scores):
        buffer.write(f"{node} {float(score)!r}\n")

    if isinstance(target, (str, Path)):
        Path(target).write_text(buffer.getvalue(), encoding="utf-8")
    else:
        target.write(buffer.getvalue())


def parse_score_dump(text: str) -> ScoreDump:
    """
    Parse a dump from text.

    Raises:
        ParseError: On malformed lines or duplicate node ids
    """
    ids: List[int] = []
    values: List[float] = []
    metadata: Dict[str, str] = {}
    tags: List[str] = []
    seen = set()

    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            for token in stripped[1:].split():
                key, sep, value = token.partition("=")
                if sep:
                    metadata[key] = value
                else:
                    tags.append(token)
            continue

        parts = stripped.split()
        if len(parts) != 2:
            raise ParseError(f"expected 'node_id score', got {len(parts)} fields", line_number)
        try:
            node = int(parts[0])
            score = float(parts[1])
        except ValueError:
            raise ParseError(f"cannot parse {stripped!r}", line_number) from None
        if node < 0:
            raise ParseError(f"negative node id {node}", line_number)
        if node in seen:
            raise ParseError(f"duplicate node id {node}", line_number)
        seen.add(node)
        ids.append(node)
        values.append(score)

    return ScoreDump(
        node_ids=np.asarray(ids, dtype=np.int64),
        scores=np.asarray(values, dtype=np.float64),
        metadata=metadata,
        tags=tags,
    )


def read_score_dump(path: PathLike) -> ScoreDump:
    """Read and parse a dump file."""
    return parse_score_dump(Path(path).read_text(encoding="utf-8"))
