"""Observation data: ingestion, validation and sample preparation.

Durations are nonnegative reals in whatever unit the input uses (days for
court data). A row is censored only in the sense that ``y == c``; ties are
treated as uncensored events, so no event flag is stored.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (EmptyResult, InvariantViolation, MissingColumn, ParseError,
                     SingletonDecider)

__all__ = [
    "ColumnMap",
    "ObservationTable",
    "load_csv",
    "save_csv",
    "build_leave_one_out_instrument",
    "apply_caseload_filter",
]


@dataclass(frozen=True)
class ColumnMap:
    """Header names of the CSV columns. ``x``, ``cluster`` and ``decider`` are optional."""

    y: str = "y"
    c: str = "c"
    d: str = "d"
    z: str = "z"
    x: Optional[str] = "x"
    cluster: Optional[str] = None
    decider: Optional[str] = None


def _encode(labels: Sequence[str]) -> tuple[np.ndarray, tuple[str, ...]]:
    levels, codes = np.unique(np.asarray(labels, dtype=str), return_inverse=True)
    return codes.astype(np.int64), tuple(str(v) for v in levels)


@dataclass(frozen=True, eq=False)
class ObservationTable:
    """Immutable column store of observations ``(y, c, d, z, x, cluster, decider)``.

    Categorical columns are held as integer codes into the matching ``*_levels``
    tuple. Construct through :meth:`from_arrays` so invariants are checked.
    """

    y: np.ndarray
    c: np.ndarray
    d: np.ndarray
    z: np.ndarray
    x: np.ndarray
    cluster: np.ndarray
    x_levels: tuple[str, ...]
    cluster_levels: tuple[str, ...]
    decider: Optional[np.ndarray] = None
    decider_levels: Optional[tuple[str, ...]] = None
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, y, c, d, z, x=None, cluster=None, decider=None, *,
                    validate_overlap: bool = False, diagnostics=None) -> "ObservationTable":
        y = np.asarray(y, dtype=float)
        c = np.asarray(c, dtype=float)
        z = np.asarray(z, dtype=float)
        d_raw = np.asarray(d, dtype=float)
        n = y.shape[0]
        for name, arr in (("c", c), ("d", d_raw), ("z", z)):
            if arr.shape != (n,):
                raise InvariantViolation(f"column {name} has shape {arr.shape}, expected ({n},)")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(c)) and np.all(np.isfinite(z))):
            raise InvariantViolation("non-finite values in y, c or z")
        if np.any((d_raw != 0) & (d_raw != 1)):
            row = int(np.flatnonzero((d_raw != 0) & (d_raw != 1))[0])
            raise InvariantViolation(f"d must be 0 or 1 (row {row + 1})", row=row + 1)
        if np.any(y < 0) or np.any(c < 0):
            row = int(np.flatnonzero((y < 0) | (c < 0))[0])
            raise InvariantViolation(f"negative duration at row {row + 1}", row=row + 1)
        if np.any(y > c):
            row = int(np.flatnonzero(y > c)[0])
            raise InvariantViolation(
                f"y > c at row {row + 1} (y={float(y[row])!r}, c={float(c[row])!r})", row=row + 1)
        xs = np.full(n, "all") if x is None else np.asarray(x).astype(str)
        x_codes, x_levels = _encode(xs)
        if cluster is None:
            cl_codes, cl_levels = x_codes.copy(), x_levels
        else:
            cl_codes, cl_levels = _encode(np.asarray(cluster).astype(str))
        dec_codes = dec_levels = None
        if decider is not None:
            dec_codes, dec_levels = _encode(np.asarray(decider).astype(str))
        table = cls(y=y, c=c, d=d_raw.astype(np.int64), z=z, x=x_codes, cluster=cl_codes,
                    x_levels=x_levels, cluster_levels=cl_levels, decider=dec_codes,
                    decider_levels=dec_levels, diagnostics=dict(diagnostics or {}))
        if validate_overlap:
            table.check_overlap()
        return table

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_x(self) -> int:
        return len(self.x_levels)

    @property
    def gamma_c_hat(self) -> float:
        return float(self.c.max())

    @property
    def x_labels(self) -> np.ndarray:
        return np.asarray(self.x_levels)[self.x]

    @property
    def cluster_labels(self) -> np.ndarray:
        return np.asarray(self.cluster_levels)[self.cluster]

    @property
    def decider_labels(self) -> Optional[np.ndarray]:
        if self.decider is None:
            return None
        return np.asarray(self.decider_levels)[self.decider]

    def counts(self) -> dict:
        """Row counts per x level and treatment arm."""
        out = {}
        for j, lev in enumerate(self.x_levels):
            m = self.x == j
            out[lev] = {"n": int(m.sum()), "treated": int(self.d[m].sum()),
                        "untreated": int((1 - self.d[m]).sum())}
        return out

    def x_shares(self, weights: Optional[np.ndarray] = None) -> np.ndarray:
        w = np.ones(self.n) if weights is None else np.asarray(weights, dtype=float)
        tot = np.bincount(self.x, weights=w, minlength=self.n_x)
        return tot / tot.sum()

    def check_overlap(self) -> None:
        for lev, cnt in self.counts().items():
            if cnt["treated"] == 0 or cnt["untreated"] == 0:
                raise InvariantViolation(f"x level {lev!r} lacks a treated or untreated row",
                                         level=lev)

    def subset(self, mask: np.ndarray, **diagnostics) -> "ObservationTable":
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise EmptyResult("no rows left after filtering")
        dec = None if self.decider is None else self.decider_labels[mask]
        clu = self.cluster_labels[mask]
        return ObservationTable.from_arrays(
            self.y[mask], self.c[mask], self.d[mask], self.z[mask], self.x_labels[mask],
            clu, dec, diagnostics={**self.diagnostics, **diagnostics})

    def with_instrument(self, z: np.ndarray, **diagnostics) -> "ObservationTable":
        return replace(self, z=np.asarray(z, dtype=float),
                       diagnostics={**self.diagnostics, **diagnostics})

    def equals(self, other: "ObservationTable") -> bool:
        same = (self.x_levels == other.x_levels and self.cluster_levels == other.cluster_levels
                and self.decider_levels == other.decider_levels)
        arrays = ["y", "c", "d", "z", "x", "cluster"]
        same = same and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
        if self.decider is None or other.decider is None:
            return same and self.decider is other.decider
        return same and np.array_equal(self.decider, other.decider)

    def summary(self) -> dict:
        return {"n": self.n, "gamma_c_hat": self.gamma_c_hat, "levels": self.counts()}


def load_csv(path, columns: ColumnMap = ColumnMap(), *,
             validate_overlap: bool = False) -> ObservationTable:
    """Read a UTF-8 CSV with a header row into a validated table.

    Raises
    ------
    MissingColumn
        A mapped header is absent.
    ParseError
        A numeric cell does not parse; ``row`` is the 1-based data row.
    InvariantViolation
        For instance ``y > c`` or ``d`` outside {0, 1}.
    """
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn("empty file: header row required") from None
        rows = list(reader)
    header = [h.strip() for h in header]
    index = {name: i for i, name in enumerate(header)}
    wanted = {"y": columns.y, "c": columns.c, "d": columns.d, "z": columns.z}
    optional = {"x": columns.x, "cluster": columns.cluster, "decider": columns.decider}
    for role, name in wanted.items():
        if name not in index:
            raise MissingColumn(f"column {name!r} (for {role}) not in header", column=name)
    for role, name in optional.items():
        if name is not None and name not in index and not (role == "x" and name == "x"):
            raise MissingColumn(f"column {name!r} (for {role}) not in header", column=name)

    numeric = {}
    for role, name in wanted.items():
        j = index[name]
        vals = np.empty(len(rows))
        for i, row in enumerate(rows):
            try:
                vals[i] = float(row[j])
            except (ValueError, IndexError):
                raise ParseError(i + 1, name, row[j] if j < len(row) else None) from None
        numeric[role] = vals
    text = {}
    for role, name in optional.items():
        if name is None or name not in index:
            text[role] = None
            continue
        j = index[name]
        try:
            text[role] = [row[j] for row in rows]
        except IndexError:
            bad = next(i for i, row in enumerate(rows) if len(row) <= j)
            raise ParseError(bad + 1, name, None) from None
    return ObservationTable.from_arrays(
        numeric["y"], numeric["c"], numeric["d"], numeric["z"], text["x"], text["cluster"],
        text["decider"], validate_overlap=validate_overlap)


def save_csv(table: ObservationTable, path) -> None:
    """Write a table so that :func:`load_csv` reproduces it exactly (floats use ``repr``)."""
    header = ["y", "c", "d", "z", "x", "cluster"]
    cols = [table.y, table.c, table.d, table.z, table.x_labels, table.cluster_labels]
    if table.decider is not None:
        header.append("decider")
        cols.append(table.decider_labels)
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(table.n):
            w.writerow([repr(float(table.y[i])), repr(float(table.c[i])), int(table.d[i]),
                        repr(float(table.z[i])), cols[4][i], cols[5][i]]
                       + ([cols[6][i]] if len(cols) > 6 else []))


def build_leave_one_out_instrument(table: ObservationTable, *, clip: bool = True) -> ObservationTable:
    """Replace ``z`` by each decider's treatment rate excluding the focal case.

    With ``clip`` the rows whose instrument lies outside the intersection of the
    per-arm ``[min z, max z]`` ranges are dropped, so both arms share the same
    instrument support. The number of dropped rows lands in ``diagnostics``.
    """
    if table.decider is None:
        raise InvariantViolation("decider ids are required for the leave-one-out instrument")
    n_dec = np.bincount(table.decider, minlength=len(table.decider_levels))
    tot = np.bincount(table.decider, weights=table.d, minlength=len(table.decider_levels))
    single = np.flatnonzero(n_dec == 1)
    if single.size:
        lev = table.decider_levels[single[0]]
        raise SingletonDecider(f"decider {lev!r} has a single case", decider=lev)
    m = n_dec[table.decider]
    z = (tot[table.decider] - table.d) / (m - 1)
    out = table.with_instrument(z)
    if not clip:
        return out
    treated, untreated = z[table.d == 1], z[table.d == 0]
    if treated.size == 0 or untreated.size == 0:
        return out.with_instrument(z, instrument_rows_dropped=0)
    lo = max(treated.min(), untreated.min())
    hi = min(treated.max(), untreated.max())
    keep = (z >= lo) & (z <= hi)
    dropped = int((~keep).sum())
    if dropped == 0:
        return out.with_instrument(z, instrument_rows_dropped=0, instrument_range=[float(lo), float(hi)])
    return out.subset(keep, instrument_rows_dropped=dropped, instrument_range=[float(lo), float(hi)])


def apply_caseload_filter(table: ObservationTable, min_cases: int = 20,
                          min_deciders_per_level: int = 2) -> ObservationTable:
    """Keep deciders with at least ``min_cases`` cases and x levels with at least
    ``min_deciders_per_level`` such deciders, iterating to a fixed point."""
    if table.decider is None:
        raise InvariantViolation("decider ids are required for the caseload filter")
    current = table
    while True:
        keep = np.ones(current.n, dtype=bool)
        n_dec = np.bincount(current.decider, minlength=len(current.decider_levels))
        keep &= n_dec[current.decider] >= min_cases
        if not keep.any():
            raise EmptyResult("caseload filter removed every row")
        # distinct surviving deciders per level
        pairs = np.unique(np.stack([current.x[keep], current.decider[keep]]), axis=1)
        per_level = np.bincount(pairs[0], minlength=current.n_x)
        keep &= per_level[current.x] >= min_deciders_per_level
        if keep.all():
            return current
        current = current.subset(keep)
