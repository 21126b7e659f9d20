"""Per-unit observed data bound to an interference graph."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, MissingColumn, NonBinaryTreatment, ParseError
from .graph import Graph, read_edge_csv


@dataclass
class Dataset:
    """Observed outcome, binary treatment, and optional covariate columns.

    ``x`` is a discrete covariate (any sortable labels), ``strata`` an
    optional design stratum label, ``weights`` an optional per-unit column
    carried through for weighted exposure rules.
    """

    y: np.ndarray
    t: np.ndarray
    graph: Graph
    x: np.ndarray | None = None
    strata: np.ndarray | None = None
    weights: np.ndarray | None = None
    _x_levels: tuple = field(init=False, repr=False, default=())

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.t = np.asarray(self.t)
        n = self.graph.n_units
        if self.y.shape != (n,):
            raise DataError(f"y has shape {self.y.shape}, expected ({n},)")
        if self.t.shape != (n,):
            raise DataError(f"t has shape {self.t.shape}, expected ({n},)")
        vals = set(np.unique(self.t).tolist())
        if not vals <= {0, 1}:
            raise NonBinaryTreatment(f"treatment values {sorted(vals)} not in {{0, 1}}")
        self.t = self.t.astype(np.int8)
        for name in ("x", "strata", "weights"):
            col = getattr(self, name)
            if col is not None:
                col = np.asarray(col)
                if col.shape != (n,):
                    raise DataError(f"{name} has shape {col.shape}, expected ({n},)")
                setattr(self, name, col)
        if self.weights is not None:
            self.weights = self.weights.astype(np.float64)
        if self.x is not None:
            self._x_levels = tuple(sorted(np.unique(self.x).tolist()))

    @property
    def n(self) -> int:
        return self.graph.n_units

    @property
    def x_levels(self) -> tuple:
        return self._x_levels


def read_nodes_csv(path) -> dict[str, np.ndarray]:
    """Read the node table: columns id,y,t and optional x,stratum,weight.

    Ids must form 0..n-1 (any row order). Returns columns keyed by name,
    sorted by id.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ParseError("empty node file")
        names = [c.strip() for c in reader.fieldnames]
        for required in ("id", "y", "t"):
            if required not in names:
                raise MissingColumn(f"node file lacks column {required!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            clean = {k.strip(): (v.strip() if v is not None else "") for k, v in row.items()}
            try:
                rid = int(clean["id"])
                ry = float(clean["y"])
                rt = int(clean["t"])
            except (TypeError, ValueError) as exc:
                raise ParseError(f"bad id/y/t value: {exc}", line=lineno) from None
            rows.append((rid, ry, rt, clean))
    if not rows:
        raise ParseError("node file has no data rows")
    rows.sort(key=lambda r: r[0])
    ids = [r[0] for r in rows]
    if ids != list(range(len(ids))):
        raise ParseError("node ids must be exactly 0..n-1")
    out: dict[str, np.ndarray] = {
        "y": np.array([r[1] for r in rows], dtype=np.float64),
        "t": np.array([r[2] for r in rows], dtype=np.int64),
    }
    for opt, key in (("x", "x"), ("stratum", "strata"), ("weight", "weights")):
        if opt in names:
            raw = [r[3][opt] for r in rows]
            if opt == "weight":
                try:
                    out[key] = np.array([float(v) for v in raw], dtype=np.float64)
                except ValueError as exc:
                    raise ParseError(f"bad weight value: {exc}") from None
            else:
                out[key] = _parse_labels(raw)
    return out


def _parse_labels(raw: list[str]) -> np.ndarray:
    try:
        return np.array([int(v) for v in raw], dtype=np.int64)
    except ValueError:
        return np.array(raw, dtype=object)


def ingest(nodes_path, edges_path) -> Dataset:
    """Load node and edge CSVs into a validated Dataset."""
    cols = read_nodes_csv(nodes_path)
    n = len(cols["y"])
    graph = read_edge_csv(edges_path, n_units=n)
    return Dataset(y=cols["y"], t=cols["t"], graph=graph,
                   x=cols.get("x"), strata=cols.get("strata"),
                   weights=cols.get("weights"))
