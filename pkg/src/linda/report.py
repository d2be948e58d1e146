"""Result tables: TSV serialization and plot-ready derivations."""

from __future__ import annotations

import io
import math

import numpy as np
import pandas as pd
from scipy import stats

from .errors import ParseError, ValidationError
from .pipeline import LN2, LindaResult

RESULT_COLUMNS = ["taxon", "coefficient", "coefficient_log2", "stderr", "t_stat", "df",
                  "pvalue", "padj", "reject", "flags"]
NA = "NA"


def format_value(x) -> str:
    """Shortest round-trip text for numbers, ``NA`` for missing."""
    if x is None:
        return NA
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return NA
        if x.is_integer() and abs(x) < 1e15:
            return str(int(x))
        return repr(x)
    return str(x)


def parse_value(text: str):
    if text == NA:
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def write_table(frame: pd.DataFrame, fh, header_lines=()):
    """Write a TSV with optional ``# key=value`` comment lines on top."""
    for line in header_lines:
        fh.write(f"# {line}\n")
    fh.write("\t".join(frame.columns) + "\n")
    cols = [frame[c].tolist() for c in frame.columns]
    for row in zip(*cols):
        fh.write("\t".join(format_value(v) for v in row) + "\n")


def write_result(result: LindaResult, fh):
    header = [f"{k}={format_value(v)}" for k, v in result.meta.items()]
    write_table(result.to_frame(), fh, header)


def result_to_text(result: LindaResult) -> str:
    buf = io.StringIO()
    write_result(result, buf)
    return buf.getvalue()


def read_result(fh) -> LindaResult:
    """Parse a result TSV written by :func:`write_result`."""
    text = fh.read() if hasattr(fh, "read") else open(fh, encoding="utf-8").read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    meta = {}
    lines = text.splitlines()
    k = 0
    while k < len(lines) and lines[k].startswith("#"):
        key, sep, value = lines[k][1:].strip().partition("=")
        if not sep:
            raise ParseError(f"malformed header line {lines[k]!r}")
        meta[key] = parse_value(value)
        k += 1
    if k >= len(lines):
        raise ParseError("result file has no column header")
    header = lines[k].split("\t")
    if header != RESULT_COLUMNS:
        raise ParseError(f"unexpected result columns {header}")
    rows = [ln.split("\t") for ln in lines[k + 1:] if ln]
    if any(len(r) != len(header) for r in rows):
        raise ParseError("ragged result rows")
    cols = list(zip(*rows)) if rows else [()] * len(header)

    def num(j):
        return np.array([np.nan if v == NA else float(v) for v in cols[j]], dtype=float)

    flags = list(cols[9])
    return LindaResult(
        taxa_ids=list(cols[0]),
        alpha_hat=num(1),
        stderr=num(3),
        t_stat=num(4),
        df=num(5),
        pvalue=num(6),
        padj=num(7),
        reject=np.array([v == "1" for v in cols[8]], dtype=bool),
        degenerate=np.array(["degenerate" in f.split(",") for f in flags], dtype=bool),
        flags=flags,
        meta=meta,
    )


def plot_data(result: LindaResult, kind: str = "effectsize", fdr: float = 0.1) -> pd.DataFrame:
    """
    Plot-ready tables.

    ``effectsize``: taxa with ``padj <= fdr`` and their debiased coefficient,
    the raw coefficient before the bias shift, and a 95% t interval.
    ``volcano``: every taxon's coefficient, ``-log10 p`` and reject flag.
    """
    if kind == "volcano":
        with np.errstate(divide="ignore"):
            nlp = -np.log10(result.pvalue)
        return pd.DataFrame({"taxon": result.taxa_ids, "coef": result.alpha_hat,
                             "neg_log10_p": nlp, "reject": result.reject.astype(int)})
    if kind != "effectsize":
        raise ValidationError(f"unknown plot kind {kind!r}")
    shift = result.meta.get("bias_shift") or 0.0
    # a zero level admits nothing, even p-values that underflowed to 0
    keep = (result.padj <= fdr) & (fdr > 0)
    keep &= ~np.isnan(result.padj)
    idx = np.flatnonzero(keep)
    coef = result.alpha_hat[idx]
    half = stats.t.ppf(0.975, result.df[idx]) * result.stderr[idx]
    return pd.DataFrame({
        "taxon": [result.taxa_ids[i] for i in idx],
        "debiased_coef": coef,
        "nondebiased_coef": coef - shift,
        "ci_lo": coef - half,
        "ci_hi": coef + half,
    })


__all__ = ["write_result", "read_result", "plot_data", "write_table", "result_to_text",
           "format_value", "parse_value", "LN2"]
