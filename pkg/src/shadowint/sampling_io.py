"""Training-set generation, meshes and file formats.

Tabular data is CSV with a header row and 17 significant digits, which is
enough for binary doubles to survive a write/read cycle unchanged. Models and
configurations are JSON.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .errors import ContractViolation, DomainError, ParseError
from .gp_model import FlowDataset, GpHamiltonianModel
from .integrators import TrajectoryRecord, reference_flow
from .phase_systems import HamiltonianField

FLOAT_FMT = ".17g"
MAX_HALTON_DIM = 6


@dataclass(frozen=True, eq=False)
class DomainBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ContractViolation(f"bounds must be equal-length vectors, got {lo.shape} and {hi.shape}")
        if not np.all(lo < hi):
            raise DomainError(f"need lower < upper in every axis, got {lo} and {hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d) -> "DomainBox":
        return cls(d["lower"], d["upper"])


@dataclass(frozen=True, eq=False)
class MeshSpec:
    box: DomainBox
    points_per_axis: tuple

    def __post_init__(self):
        ppa = tuple(int(k) for k in np.atleast_1d(self.points_per_axis))
        if len(ppa) != self.box.dim:
            raise ContractViolation(f"{len(ppa)} axis counts for a {self.box.dim}-dimensional box")
        if min(ppa) < 2:
            raise DomainError(f"need at least 2 points per axis, got {ppa}")
        object.__setattr__(self, "points_per_axis", ppa)

    @property
    def size(self) -> int:
        return int(np.prod(self.points_per_axis))

    def to_dict(self) -> dict:
        return {"box": self.box.to_dict(), "points_per_axis": list(self.points_per_axis)}

    @classmethod
    def from_dict(cls, d) -> "MeshSpec":
        return cls(DomainBox.from_dict(d["box"]), d["points_per_axis"])


def halton_sequence(dim: int, count: int, box: DomainBox, start: int = 1) -> np.ndarray:
    """Unscrambled Halton points ``start, start+1, ...`` (bases 2, 3, 5, ...) mapped into ``box``.

    Index 0 is the all-zeros corner, so the default start of 1 keeps every
    point strictly inside the box.
    """
    if not 1 <= dim <= MAX_HALTON_DIM:
        raise DomainError(f"Halton dimension must be in 1..{MAX_HALTON_DIM}, got {dim}")
    if count < 1:
        raise DomainError("count must be at least 1")
    if start < 0:
        raise DomainError("start index must be nonnegative")
    if box.dim != dim:
        raise ContractViolation(f"box has dimension {box.dim}, expected {dim}")
    engine = qmc.Halton(dim, scramble=False)
    if start:
        engine.fast_forward(start)
    return qmc.scale(engine.random(count), box.lower, box.upper)


def generate_flow_dataset(field: HamiltonianField, Y, h: float, n_substeps: int) -> FlowDataset:
    """Pair every ``y_j`` with its image under the (highly resolved) time-``h`` flow."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    return FlowDataset(Y, reference_flow(field, Y, h, n_substeps), h)


def uniform_mesh(spec: MeshSpec) -> np.ndarray:
    """Tensor grid with inclusive endpoints, enumerated row-major (last axis fastest)."""
    axes = [np.linspace(lo, hi, k) for lo, hi, k in zip(spec.box.lower, spec.box.upper, spec.points_per_axis)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack(grids, axis=-1).reshape(-1, spec.box.dim)


@dataclass
class EnergySeries:
    """Named scalar observables sampled at common times."""

    times: np.ndarray
    columns: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        cols = {}
        for name, values in self.columns.items():
            values = np.asarray(values, dtype=float).ravel()
            if values.shape != self.times.shape:
                raise ContractViolation(f"column {name!r} has {values.size} entries for {self.times.size} times")
            cols[str(name)] = values
        self.columns = cols

    def __len__(self):
        return self.times.size


# -- CSV plumbing -------------------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), FLOAT_FMT)


def _write_table(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    os.replace(tmp, path)


def _read_table(path, expect=None):
    """Return ``(header, array)``; ``expect(header)`` may raise ParseError for bad column names."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise ParseError(f"{path}: empty file, header row expected", line=1)
    header = [c.strip() for c in rows[0]]
    for col, name in enumerate(header, start=1):
        try:
            float(name)
        except ValueError:
            continue
        raise ParseError(f"{path}: header row missing (found number {name!r})", line=1, column=col)
    if expect is not None:
        expect(header)
    data = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != len(header):
            raise ParseError(f"{path}: expected {len(header)} fields, got {len(row)}", line=line,
                             column=min(len(row), len(header)) + 1)
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: cannot parse {cell!r} as a number", line=line, column=j + 1) from None
    return header, data


def _phase_names(n, prefix=""):
    return [f"{prefix}q{i + 1}" for i in range(n)] + [f"{prefix}p{i + 1}" for i in range(n)]


def _require(path, header, names):
    def check(found):
        if found[: len(names)] != names:
            col = next((i + 1 for i, (a, b) in enumerate(zip(found, names)) if a != b), len(found) + 1)
            raise ParseError(f"{path}: expected columns {names}, got {found}", line=1, column=col)
    return check(header)


def write_dataset(path, data: FlowDataset):
    """Columns ``h, q1..qn, p1..pn, qbar1.., pbar1..``."""
    n = data.n
    header = ["h"] + _phase_names(n) + _phase_names(n, "bar_")
    rows = np.column_stack([np.full(len(data), data.h), data.Y, data.Ybar])
    _write_table(path, header, rows)


def read_dataset(path) -> FlowDataset:
    header, arr = _read_table(path)
    width = len(header) - 1
    if width < 2 or width % 4:
        raise ParseError(f"{path}: dataset needs h plus 4n state columns, got {len(header)} columns", line=1)
    n = width // 4
    _require(path, header, ["h"] + _phase_names(n) + _phase_names(n, "bar_"))
    if arr.shape[0] == 0:
        raise ParseError(f"{path}: dataset has no rows", line=2)
    hs = arr[:, 0]
    if np.any(hs != hs[0]):
        bad = int(np.argmax(hs != hs[0]))
        raise ParseError(f"{path}: step size must be constant", line=bad + 2, column=1)
    return FlowDataset(arr[:, 1:1 + 2 * n], arr[:, 1 + 2 * n:], float(hs[0]))


def write_trajectory(path, traj: TrajectoryRecord, energy=None):
    """Columns ``t, q1..qn, p1..pn`` plus ``H`` when ``energy`` is given."""
    header = ["t"] + _phase_names(traj.n)
    cols = [traj.times, traj.states]
    if energy is not None:
        header.append("H")
        cols.append(np.asarray(energy, dtype=float).reshape(-1))
    _write_table(path, header, np.column_stack(cols))


def read_trajectory(path, method_tag: str = "", field_tag: str = "") -> TrajectoryRecord:
    """Read a trajectory CSV; ``meta['energy']`` holds the optional energy column."""
    header, arr = _read_table(path)
    has_energy = header[-1] == "H"
    width = len(header) - 1 - int(has_energy)
    if width < 2 or width % 2:
        raise ParseError(f"{path}: cannot infer phase dimension from {len(header)} columns", line=1)
    n = width // 2
    _require(path, header, ["t"] + _phase_names(n))
    if arr.shape[0] == 0:
        raise ParseError(f"{path}: trajectory has no rows", line=2)
    t = arr[:, 0]
    h = float(t[1] - t[0]) if t.size > 1 else 0.0
    meta = {"energy": arr[:, -1].copy()} if has_energy else {}
    return TrajectoryRecord(arr[:, 1:1 + 2 * n], h=h, t0=float(t[0]), method_tag=method_tag,
                            field_tag=field_tag, meta=meta)


def write_energy(path, series: EnergySeries):
    header = ["t"] + list(series.columns)
    _write_table(path, header, np.column_stack([series.times] + list(series.columns.values())))


def read_energy(path) -> EnergySeries:
    header, arr = _read_table(path)
    if header[0] != "t":
        raise ParseError(f"{path}: first column must be 't'", line=1, column=1)
    if len(header) < 2:
        raise ParseError(f"{path}: no observable columns", line=1, column=2)
    return EnergySeries(arr[:, 0], {name: arr[:, j] for j, name in enumerate(header[1:], start=1)})


def write_table(path, header, rows):
    """Generic numeric CSV (meshes, reports)."""
    _write_table(path, list(header), rows)


def read_table(path):
    return _read_table(path)


# -- JSON ---------------------------------------------------------------------

def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    # json emits repr() of floats, the shortest string that round-trips
    tmp.write_text(json.dumps(obj, indent=1, allow_nan=False) + "\n")
    os.replace(tmp, path)


def read_json(path):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno, column=exc.colno) from None


def write_model(path, model: GpHamiltonianModel):
    write_json(path, model.to_dict())


def read_model(path) -> GpHamiltonianModel:
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: model document must be a JSON object", line=1, column=1)
    return GpHamiltonianModel.from_dict(doc)
