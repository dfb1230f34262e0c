"""Parsers for the solver pipeline's text artifacts.

The plots package reads only documented file formats (mesh text, field /
trace / scaling / loss CSVs); it never imports the solver package.
"""

import numpy as np


class InputError(ValueError):
    """Malformed input artifact."""


def read_mesh_text(path):
    """Mesh text format: 'nodes N tris T edges E' header, then rows."""
    try:
        with open(path) as fh:
            header = fh.readline().split()
            if (
                len(header) != 6
                or header[0] != "nodes"
                or header[2] != "tris"
                or header[4] != "edges"
            ):
                raise InputError(f"malformed mesh header in {path}")
            n, t, e = int(header[1]), int(header[3]), int(header[5])
            lines = [ln for ln in fh.read().split("\n") if ln.strip()]
    except OSError as exc:
        raise InputError(f"cannot read mesh file {path}: {exc}") from exc
    if len(lines) != n + t + e:
        raise InputError(f"mesh file {path} truncated")
    try:
        nodes = np.array([[float(v) for v in lines[i].split()] for i in range(n)])
        tris = np.array([[int(v) for v in lines[n + i].split()] for i in range(t)])
    except ValueError as exc:
        raise InputError(f"unparseable mesh row in {path}: {exc}") from exc
    if nodes.shape[1] != 2 or tris.shape[1] != 3:
        raise InputError(f"unexpected mesh row widths in {path}")
    return nodes, tris


def read_csv(path, expected_header):
    """Strict CSV reader: exact header match, uniform float rows."""
    try:
        with open(path) as fh:
            header = fh.readline().strip()
            if header != expected_header:
                raise InputError(
                    f"{path}: expected header {expected_header!r}, found {header!r}"
                )
            rows = [ln for ln in fh.read().split("\n") if ln.strip()]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InputError(f"{path} has no data rows")
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in rows])
    except ValueError as exc:
        raise InputError(f"unparseable row in {path}: {exc}") from exc
    if data.shape[1] != len(expected_header.split(",")):
        raise InputError(f"{path}: ragged rows")
    return data
