"""Text exports for mapped graphs: edge list, DOT, dense adjacency CSV.

Node ids in every format are 1-based.
"""

from __future__ import annotations

from typing import TextIO

import numpy as np

from .avg import BandedMatrix
from .visibility import VisGraph

FORMATS = ("edgelist", "dot", "csv")


def format_weight(w: float) -> str:
    w = float(w)
    return str(int(w)) if w.is_integer() else repr(w)


def _graph(g: VisGraph | BandedMatrix) -> VisGraph:
    return g.to_graph() if isinstance(g, BandedMatrix) else g


def write_edgelist(g: VisGraph | BandedMatrix, fh: TextIO) -> None:
    """One ``u<TAB>v<TAB>weight`` line per edge, ordered by span then start."""
    g = _graph(g)
    for (u, v), w in zip(g.pairs, g.weights):
        fh.write(f"{u + 1}\t{v + 1}\t{format_weight(w)}\n")


def write_dot(g: VisGraph | BandedMatrix, fh: TextIO, name: str = "G") -> None:
    g = _graph(g)
    fh.write(f"graph {name} {{\n")
    for node in range(g.node_count):
        fh.write(f"  {node + 1};\n")
    for (u, v), w in zip(g.pairs, g.weights):
        fh.write(f"  {u + 1} -- {v + 1} [weight={format_weight(w)}];\n")
    fh.write("}\n")


def write_adjacency_csv(g: VisGraph | BandedMatrix, fh: TextIO) -> None:
    dense = g.to_dense()
    for row in dense:
        fh.write(",".join(format_weight(w) for w in row) + "\n")


def write_graph(g: VisGraph | BandedMatrix, fh: TextIO, fmt: str) -> None:
    if fmt == "edgelist":
        write_edgelist(g, fh)
    elif fmt == "dot":
        write_dot(g, fh)
    elif fmt == "csv":
        write_adjacency_csv(g, fh)
    else:
        raise ValueError(f"unknown format {fmt!r}; choose from {', '.join(FORMATS)}")


def read_series(fh: TextIO) -> np.ndarray:
    """Parse one number per line; blank lines are skipped."""
    values = []
    for lineno, line in enumerate(fh, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            values.append(float(text))
        except ValueError:
            raise ValueError(f"line {lineno}: not a number: {text!r}") from None
    return np.array(values)
