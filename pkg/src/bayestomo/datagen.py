"""Training-set generation: phantom draws paired with noiseless solver output.

Targets are deliberately noise-free; measurement noise belongs to the
likelihood, not to the surrogate's regression target.  Every pair is
reproducible in isolation: pair i is generated from the substream seeded by
(seed, i, retry), so regenerating a single index matches the stored data.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .fem import SolverError
from .problems import Problem

_MAGIC = b"BTDS"
_VERSION = 1
_PROBLEM_TAGS = {"eit": 0, "dot": 1, "qpat": 2}
_TAG_PROBLEMS = {v: k for k, v in _PROBLEM_TAGS.items()}


class DatasetFormatError(ValueError):
    """Malformed or truncated dataset file."""


@dataclass
class MixSpec:
    """Phantom category fractions; zero-weight categories are skipped."""

    circles: float = 0.5
    gp: float = 0.5
    rotated: float = 0.0
    star: float = 0.0

    def categories(self):
        weights = [
            ("circle", self.circles),
            ("gp", self.gp),
            ("rotated", self.rotated),
            ("star", self.star),
        ]
        total = sum(w for _, w in weights)
        if total <= 0:
            raise ValueError("phantom mix has no positive weights")
        return [(name, w / total) for name, w in weights if w > 0]


def default_mix(problem_name: str) -> MixSpec:
    if problem_name == "qpat":
        return MixSpec(circles=0.4, gp=0.0, rotated=0.3, star=0.3)
    return MixSpec(circles=0.5, gp=0.5)


@dataclass
class DataSet:
    """Paired network inputs and measurement targets with provenance."""

    problem: str
    inputs: np.ndarray
    targets: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_rows(self) -> int:
        return self.targets.shape[1]

    @property
    def output_cols(self) -> int:
        return self.targets.shape[2]

    def pairs(self):
        return zip(self.inputs, self.targets)


def _category_for_index(i: int, n: int, categories) -> str:
    """Deterministic block allocation of categories over indices."""
    bounds = []
    acc = 0.0
    for name, frac in categories:
        acc += frac
        bounds.append((name, int(round(acc * n))))
    for name, hi in bounds:
        if i < hi:
            return name
    return bounds[-1][0]


def generate_pair(problem: Problem, seed: int, index: int, category: str, retry: int = 0):
    """One (input, target) pair from the substream (seed, index, retry)."""
    rng = np.random.default_rng([seed, index, retry])
    x = problem.training_input(category, rng)
    y = problem.forward_from_input(x)
    return np.asarray(x, dtype=float), y.data


def generate_dataset(
    problem: Problem,
    n: int,
    mix: MixSpec | None = None,
    seed: int = 0,
    max_retry_fraction: float = 0.05,
) -> DataSet:
    """Draw n phantom inputs per the mix and solve each forward problem.

    Solver failures resample the offending index from a fresh substream; if
    more than ``max_retry_fraction`` of the draws need retries the generator
    aborts rather than silently shifting the distribution.
    """
    if n < 1:
        raise ValueError("need at least one pair")
    if mix is None:
        mix = default_mix(problem.name)
    categories = mix.categories()
    inputs = None
    targets = None
    retries = 0
    for i in range(n):
        category = _category_for_index(i, n, categories)
        for retry in range(10):
            try:
                x, y = generate_pair(problem, seed, i, category, retry)
                break
            except SolverError:
                retries += 1
                if retries > max_retry_fraction * n:
                    raise RuntimeError(
                        f"dataset generation aborted: {retries} solver retries over {i + 1} draws"
                    )
        else:
            raise RuntimeError(f"pair {i} failed after 10 retries")
        if inputs is None:
            inputs = np.empty((n, len(x)))
            targets = np.empty((n, y.shape[0], y.shape[1]))
        inputs[i] = x
        targets[i] = y
    cfg_hash = hashlib.sha256(
        repr((problem.name, problem.cfg, n, mix)).encode()
    ).hexdigest()
    return DataSet(
        problem=problem.name,
        inputs=inputs,
        targets=targets,
        provenance={"seed": seed, "config_hash": cfg_hash, "retries": retries},
    )


def split(ds: DataSet, holdout_fraction: float, seed: int = 0):
    """Deterministic disjoint train/validation split covering the dataset."""
    if not 0 < holdout_fraction < 1:
        raise ValueError("holdout fraction must lie strictly between 0 and 1")
    n_hold = int(round(ds.count * holdout_fraction))
    if n_hold == 0 or n_hold == ds.count:
        raise ValueError(f"degenerate split: {ds.count - n_hold}/{n_hold}")
    perm = np.random.default_rng(seed).permutation(ds.count)
    hold, keep = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
    prov = dict(ds.provenance)
    train = DataSet(ds.problem, ds.inputs[keep], ds.targets[keep], {**prov, "split": "train"})
    val = DataSet(ds.problem, ds.inputs[hold], ds.targets[hold], {**prov, "split": "validation"})
    return train, val


def write_dataset(ds: DataSet, path) -> None:
    """Versioned binary: magic, header ints, provenance, then raw doubles."""
    seed = int(ds.provenance.get("seed", 0))
    cfg_hash = bytes.fromhex(ds.provenance.get("config_hash", "0" * 64))
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            struct.pack(
                "<IBIIIIq",
                _VERSION,
                _PROBLEM_TAGS[ds.problem],
                ds.count,
                ds.input_dim,
                ds.output_rows,
                ds.output_cols,
                seed,
            )
        )
        fh.write(cfg_hash)
        fh.write(np.ascontiguousarray(ds.inputs, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.targets, dtype="<f8").tobytes())


def read_dataset(path) -> DataSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise DatasetFormatError(f"{path} is not a dataset file")
    header_size = 4 + struct.calcsize("<IBIIIIq") + 32
    if len(blob) < header_size:
        raise DatasetFormatError(f"dataset file {path} truncated")
    version, tag, count, input_dim, rows, cols, seed = struct.unpack(
        "<IBIIIIq", blob[4 : header_size - 32]
    )
    if version != _VERSION:
        raise DatasetFormatError(f"unsupported dataset format version {version}")
    if tag not in _TAG_PROBLEMS:
        raise DatasetFormatError(f"unknown problem tag {tag}")
    cfg_hash = blob[header_size - 32 : header_size].hex()
    n_in = count * input_dim
    n_out = count * rows * cols
    expected = header_size + 8 * (n_in + n_out)
    if len(blob) != expected:
        raise DatasetFormatError(
            f"dataset file {path} has {len(blob)} bytes, expected {expected}"
        )
    inputs = np.frombuffer(blob, dtype="<f8", count=n_in, offset=header_size)
    targets = np.frombuffer(blob, dtype="<f8", count=n_out, offset=header_size + 8 * n_in)
    return DataSet(
        problem=_TAG_PROBLEMS[tag],
        inputs=inputs.reshape(count, input_dim).copy(),
        targets=targets.reshape(count, rows, cols).copy(),
        provenance={"seed": seed, "config_hash": cfg_hash},
    )
