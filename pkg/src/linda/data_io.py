"""
Count-table and metadata loading, filtering, winsorization and design
construction.

Count tables are taxa x samples: the first row holds sample ids and the first
column holds taxon ids. Metadata tables are samples x variables with sample
ids in the first column.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from typing import IO, Sequence, Union

import numpy as np
import pandas as pd

from .errors import DesignError, ParseError, ValidationError

Source = Union[str, os.PathLike, IO[bytes], IO[str]]

VARIABLE_KINDS = ("continuous", "binary", "categorical", "grouping")


@dataclass(frozen=True)
class CountTable:
    """Non-negative integer counts, rows are taxa and columns are samples."""

    taxa_ids: list
    sample_ids: list
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValidationError("count matrix must be two-dimensional")
        if counts.shape != (len(self.taxa_ids), len(self.sample_ids)):
            raise ValidationError(
                f"count matrix shape {counts.shape} does not match "
                f"{len(self.taxa_ids)} taxa x {len(self.sample_ids)} samples")
        _check_unique(self.taxa_ids, "taxon")
        _check_unique(self.sample_ids, "sample")
        if counts.dtype.kind not in "iu":
            if not np.all(np.isfinite(counts)) or np.any(counts != np.round(counts)):
                raise ValidationError("counts must be integer-valued")
            counts = counts.astype(np.int64)
        neg = np.argwhere(counts < 0)
        if len(neg):
            i, j = neg[0]
            raise ValidationError(
                f"negative count at ({self.taxa_ids[i]}, {self.sample_ids[j]})")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "taxa_ids", list(self.taxa_ids))
        object.__setattr__(self, "sample_ids", list(self.sample_ids))

    @property
    def m(self) -> int:
        return self.counts.shape[0]

    @property
    def n(self) -> int:
        return self.counts.shape[1]

    def subset(self, taxa=None, samples=None) -> "CountTable":
        """Return a new table restricted to boolean/int index selections."""
        ti = np.arange(self.m) if taxa is None else np.flatnonzero(_as_mask(taxa, self.m))
        si = np.arange(self.n) if samples is None else np.flatnonzero(_as_mask(samples, self.n))
        return CountTable([self.taxa_ids[i] for i in ti],
                          [self.sample_ids[j] for j in si],
                          self.counts[np.ix_(ti, si)])


@dataclass(frozen=True)
class MetadataTable:
    """Per-sample variables, index aligned with a CountTable's sample ids."""

    data: pd.DataFrame
    kinds: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_unique(list(self.data.index), "sample")
        kinds = {col: infer_kind(self.data[col]) for col in self.data.columns}
        for col, kind in self.kinds.items():
            if col not in self.data.columns:
                raise ValidationError(f"unknown metadata variable {col!r}")
            if kind not in VARIABLE_KINDS:
                raise ValidationError(f"unknown variable kind {kind!r}")
            kinds[col] = kind
        object.__setattr__(self, "kinds", kinds)

    @property
    def sample_ids(self) -> list:
        return list(self.data.index)

    def aligned_to(self, counts: CountTable) -> "MetadataTable":
        """Reorder rows to match ``counts.sample_ids``; the id sets must agree."""
        ours, theirs = set(self.data.index), set(counts.sample_ids)
        if ours != theirs:
            missing = sorted(theirs - ours)[:5]
            extra = sorted(ours - theirs)[:5]
            raise ValidationError(
                "metadata sample ids do not match count table "
                f"(missing from metadata: {missing}, not in counts: {extra})")
        return MetadataTable(self.data.loc[counts.sample_ids], dict(self.kinds))


@dataclass(frozen=True)
class DesignSpec:
    covariate_of_interest: str
    adjustments: tuple = ()
    random_group: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "adjustments", tuple(self.adjustments))
        if self.covariate_of_interest in self.adjustments:
            raise ValidationError(
                f"{self.covariate_of_interest!r} is both the covariate of "
                "interest and an adjustment")
        if self.random_group is not None and (
                self.random_group == self.covariate_of_interest
                or self.random_group in self.adjustments):
            raise ValidationError(
                f"grouping variable {self.random_group!r} is also a fixed effect")

    @classmethod
    def parse(cls, formula: str) -> "DesignSpec":
        """Parse ``"u [+ c1 + c2] [| group]"``."""
        fixed, _, group = formula.partition("|")
        terms = [t.strip() for t in fixed.split("+")]
        if not terms or any(t == "" for t in terms):
            raise ValidationError(f"malformed formula {formula!r}")
        group = group.strip() or None
        if group is not None and ("|" in group or "+" in group):
            raise ValidationError(f"only one grouping variable allowed in {formula!r}")
        return cls(terms[0], tuple(terms[1:]), group)

    def __str__(self):
        s = " + ".join((self.covariate_of_interest,) + self.adjustments)
        return s + (f" | {self.random_group}" if self.random_group else "")


@dataclass(frozen=True)
class DesignMatrix:
    """Fixed-effect design with columns (u, 1, c_1, ..., c_d)."""

    Z: np.ndarray
    columns: list
    d: int
    sample_ids: list
    groups: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def u(self) -> np.ndarray:
        return self.Z[:, 0]


def _check_unique(ids, what):
    seen = set()
    for x in ids:
        if x in seen:
            raise ValidationError(f"duplicate {what} id {x!r}")
        seen.add(x)


def _as_mask(sel, size):
    sel = np.asarray(sel)
    if sel.dtype == bool:
        return sel
    mask = np.zeros(size, dtype=bool)
    mask[sel] = True
    return mask


def _sniff_sep(source, fmt):
    if fmt is not None:
        fmt = fmt.lower()
        if fmt not in ("tsv", "csv"):
            raise ParseError(f"unknown table format {fmt!r}")
        return "," if fmt == "csv" else "\t"
    name = source if isinstance(source, (str, os.PathLike)) else getattr(source, "name", "")
    return "," if str(name).lower().endswith(".csv") else "\t"


def _read_text(source) -> io.StringIO:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            raw = fh.read()
    else:
        raw = source.read()
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not valid UTF-8: {exc}") from None
    return io.StringIO(raw)


def _split_header(text: io.StringIO, sep: str):
    header = text.readline().rstrip("\r\n")
    if not header:
        raise ParseError("empty input")
    return [h.strip() for h in header.split(sep)]


def read_count_table(source: Source, format: str | None = None) -> CountTable:
    """
    Parse a taxa x samples count grid.

    Parameters
    ----------
    source : path or binary/text stream
    format : {"tsv", "csv"}, optional
        Delimiter override. By default ``.csv`` files are comma separated and
        everything else is tab separated.

    Returns
    -------
    CountTable
    """
    sep = _sniff_sep(source, format)
    text = _read_text(source)
    header = _split_header(text, sep)
    sample_ids = header[1:]
    if not sample_ids:
        raise ParseError("header row has no sample ids")
    _check_unique(sample_ids, "sample")
    try:
        frame = pd.read_csv(text, sep=sep, header=None, index_col=0, dtype={0: str},
                            keep_default_na=False, na_values=[""], engine="c")
    except pd.errors.EmptyDataError:
        raise ParseError("no taxa rows") from None
    except pd.errors.ParserError as exc:
        raise ParseError(str(exc)) from None
    if frame.shape[0] == 0:
        raise ParseError("no taxa rows")
    if frame.shape[1] != len(sample_ids):
        raise ParseError(
            f"rows have {frame.shape[1]} count cells but the header names "
            f"{len(sample_ids)} samples")
    taxa_ids = [str(t).strip() for t in frame.index]
    _check_unique(taxa_ids, "taxon")

    values = frame.to_numpy()
    if values.dtype.kind not in "iu":
        values = _coerce_counts(frame, taxa_ids, sample_ids)
    neg = np.argwhere(values < 0)
    if len(neg):
        i, j = neg[0]
        raise ParseError(f"negative count at ({taxa_ids[i]}, {sample_ids[j]})")
    return CountTable(taxa_ids, sample_ids, values.astype(np.int64, copy=False))


def _coerce_counts(frame, taxa_ids, sample_ids) -> np.ndarray:
    # slow path, only taken when some cell is not a plain integer
    out = np.empty(frame.shape, dtype=np.int64)
    raw = frame.to_numpy(dtype=object)
    for i in range(raw.shape[0]):
        for j in range(raw.shape[1]):
            cell = raw[i, j]
            where = f"({taxa_ids[i]}, {sample_ids[j]}) [row {i + 2}, column {j + 2}]"
            try:
                val = float(cell)
            except (TypeError, ValueError):
                raise ParseError(f"cannot parse count {cell!r} at {where}") from None
            if not math.isfinite(val) or val != int(val):
                raise ParseError(f"non-integer count {cell!r} at {where}")
            if val < 0:
                raise ParseError(f"negative count at ({taxa_ids[i]}, {sample_ids[j]})")
            out[i, j] = int(val)
    return out


def infer_kind(col: pd.Series) -> str:
    """Classify a metadata column as continuous, binary or categorical."""
    values = col.dropna().unique()
    if len(values) == 2:
        return "binary"
    if pd.api.types.is_numeric_dtype(col) and not pd.api.types.is_bool_dtype(col):
        return "continuous"
    return "categorical"


def read_metadata(source: Source, format: str | None = None) -> MetadataTable:
    """Read a samples x variables table; the first column holds sample ids."""
    sep = _sniff_sep(source, format)
    text = _read_text(source)
    try:
        frame = pd.read_csv(text, sep=sep, index_col=0, dtype={0: str})
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise ParseError(f"cannot parse metadata: {exc}") from None
    if frame.shape[0] == 0:
        raise ParseError("metadata has no sample rows")
    frame.index = [str(s).strip() for s in frame.index]
    frame.columns = [str(c).strip() for c in frame.columns]
    return MetadataTable(frame)


def filter_dataset(counts: CountTable, meta: MetadataTable | None = None,
                   min_libsize: int = 1000, min_prevalence: float = 0.10):
    """
    Drop shallow samples, then rare taxa, until neither rule removes anything.

    Samples with library size below ``min_libsize`` go first; then taxa
    observed (count > 0) in fewer than ``ceil(min_prevalence * n_retained)``
    samples. Dropping taxa lowers library sizes, so the two passes repeat to
    a fixed point, which makes the filter idempotent.

    Returns
    -------
    (CountTable, MetadataTable or None)
    """
    if min_libsize < 0:
        raise ValidationError("min_libsize must be >= 0")
    if not 0.0 <= min_prevalence <= 1.0:
        raise ValidationError("min_prevalence must lie in [0, 1]")
    Y = counts.counts
    keep_s = np.ones(counts.n, dtype=bool)
    keep_t = np.ones(counts.m, dtype=bool)
    while True:
        sub = Y[np.ix_(keep_t, keep_s)]
        libsize_ok = sub.sum(axis=0) >= min_libsize
        new_s = keep_s.copy()
        new_s[keep_s] = libsize_ok
        n_kept = int(new_s.sum())
        if n_kept == 0:
            raise ValidationError("empty dataset after filtering")
        # small slack so e.g. 0.1 * 30 does not round up to 4
        need = math.ceil(min_prevalence * n_kept - 1e-9)
        present = (Y[np.ix_(keep_t, new_s)] > 0).sum(axis=1)
        new_t = keep_t.copy()
        new_t[keep_t] = present >= need
        if not new_t.any():
            raise ValidationError("empty dataset after filtering")
        if np.array_equal(new_s, keep_s) and np.array_equal(new_t, keep_t):
            break
        keep_s, keep_t = new_s, new_t

    out = counts.subset(taxa=keep_t, samples=keep_s)
    if meta is None:
        return out, None
    meta = meta.aligned_to(counts)
    return out, MetadataTable(meta.data.loc[out.sample_ids], dict(meta.kinds))


def winsorize(counts: CountTable, quantile: float = 0.97) -> CountTable:
    """
    Cap each taxon's counts at the ceiling of its own upper quantile.

    The per-row quantile uses linear interpolation (type 7). Entries above
    the quantile ``q_i`` are replaced with ``ceil(q_i)``; nothing else changes.
    """
    if not 0.5 < quantile <= 1.0:
        raise ValidationError("quantile must lie in (0.5, 1]")
    Y = counts.counts
    q = np.quantile(Y, quantile, axis=1, method="linear", keepdims=True)
    cap = np.ceil(q).astype(Y.dtype)
    W = np.where(Y > q, cap, Y)
    return CountTable(counts.taxa_ids, counts.sample_ids, W)


def _encode_binary(col: pd.Series, name: str) -> tuple[np.ndarray, str]:
    levels = col.dropna().unique()
    if len(levels) != 2:
        raise ValidationError(f"binary variable {name!r} must have two levels")
    if pd.api.types.is_numeric_dtype(col):
        lo, hi = sorted(levels)
    else:
        lo, hi = sorted(levels, key=str)
    return (col.to_numpy() == hi).astype(float), f"{name}[{hi}]"


def build_design(meta: MetadataTable, spec: DesignSpec,
                 sample_ids: Sequence | None = None) -> DesignMatrix:
    """
    Assemble Z with columns (u, intercept, adjustments...).

    Binary variables become 0/1 with the smaller level (numeric order, or
    lexicographic for strings) as 0. Categorical adjustments are dummy coded
    against their first sorted level.
    """
    data = meta.data if sample_ids is None else meta.data.loc[list(sample_ids)]
    names = [spec.covariate_of_interest, *spec.adjustments]
    if spec.random_group:
        names.append(spec.random_group)
    for name in names:
        if name not in data.columns:
            raise ValidationError(f"metadata has no column {name!r}")
        if data[name].isna().any():
            raise ValidationError(f"missing values in metadata column {name!r}")

    cols, labels = [], []
    u_name = spec.covariate_of_interest
    kind = meta.kinds.get(u_name, infer_kind(data[u_name]))
    if kind == "binary":
        u, label = _encode_binary(data[u_name], u_name)
    elif kind == "continuous":
        u, label = data[u_name].to_numpy(dtype=float), u_name
    else:
        raise DesignError(
            f"categorical covariate of interest {u_name!r} with "
            f"{data[u_name].nunique()} levels is unsupported")
    cols += [u, np.ones(len(data))]
    labels += [label, "(Intercept)"]

    for name in spec.adjustments:
        kind = meta.kinds.get(name, infer_kind(data[name]))
        col = data[name]
        if kind == "binary":
            v, label = _encode_binary(col, name)
            cols.append(v)
            labels.append(label)
        elif kind == "continuous":
            cols.append(col.to_numpy(dtype=float))
            labels.append(name)
        else:
            levels = sorted(col.unique(), key=str)
            for lev in levels[1:]:
                cols.append((col.to_numpy() == lev).astype(float))
                labels.append(f"{name}[{lev}]")

    Z = np.column_stack(cols)
    _check_rank(Z, labels)
    groups = None
    if spec.random_group:
        groups = data[spec.random_group].astype(str).to_numpy()
    return DesignMatrix(Z, labels, Z.shape[1] - 2, list(data.index), groups)


def design_from_arrays(u, C=None, groups=None, sample_ids=None) -> DesignMatrix:
    """Build a DesignMatrix straight from numeric arrays."""
    u = np.asarray(u, dtype=float)
    n = len(u)
    cols = [u, np.ones(n)]
    labels = ["u", "(Intercept)"]
    if C is not None:
        C = np.asarray(C, dtype=float).reshape(n, -1)
        for k in range(C.shape[1]):
            cols.append(C[:, k])
            labels.append(f"c{k + 1}")
    Z = np.column_stack(cols)
    _check_rank(Z, labels)
    ids = list(sample_ids) if sample_ids is not None else [f"s{k + 1}" for k in range(n)]
    return DesignMatrix(Z, labels, Z.shape[1] - 2, ids,
                        None if groups is None else np.asarray(groups))


def _check_rank(Z, labels):
    if Z.shape[0] <= Z.shape[1]:
        raise DesignError(
            f"design has {Z.shape[1]} columns but only {Z.shape[0]} samples")
    if np.linalg.matrix_rank(Z) == Z.shape[1]:
        return
    # grow the column set until rank stops increasing to name the culprit
    for k in range(1, Z.shape[1] + 1):
        if np.linalg.matrix_rank(Z[:, :k]) < k:
            raise DesignError(
                f"design matrix is rank deficient: column {labels[k - 1]!r} is "
                f"collinear with {labels[:k - 1]}")
    raise DesignError("design matrix is rank deficient")
