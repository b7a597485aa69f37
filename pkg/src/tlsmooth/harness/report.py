"""Turn persisted run records into flat CSV tables and plot data.

Outputs, all written atomically and deterministically (methods in
sorted order, floats via repr):

- summary.csv            one row per method: mean/std/ci95 per metric
- significance.csv       paired one-sided t-tests between method pairs
- pr_curve_<method>.csv  per-seed PR curve points
- delta_tpr.csv          per-seed, per-bin TPR difference vs. baseline
- delta_tnr.csv          same for TNR
- delta_tpr_mean.csv     per-bin mean of the above across seeds
- delta_tnr_mean.csv     same for TNR

An empty records directory yields header-only tables.
"""

from __future__ import annotations

import csv
import glob
import io
import os

import numpy as np
from scipy import stats

from ..errors import InvalidInputError
from ..ioutil import atomic_write_text
from .experiment import RunRecord
from .io import read_json

_METRICS = ("auprc", "auroc", "recall_at_precision", "event_recall")


def load_records(runs_dir: str) -> dict:
    """Read records/<method>.json files into {method: RunRecord}."""
    pattern = os.path.join(runs_dir, "records", "*.json")
    out = {}
    for path in sorted(glob.glob(pattern)):
        if path.endswith(".partial.json"):
            continue
        record = RunRecord.from_dict(read_json(path))
        out[record.method] = record
    return out


def _fmt(v):
    # repr of a Python float is the shortest round-trip form; numpy
    # scalars are converted first so their reprs never leak into CSVs
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return v


def _write_csv(path: str, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def paired_one_sided_p(a, b):
    """p-value for H1: mean(a - b) > 0 under a paired Student t-test.

    Degenerate spread (all differences equal) maps to 0.0 / 0.5 / 1.0
    by the sign of the common difference. Fewer than two pairs -> None.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInputError("paired test needs two equal-length vectors")
    n = a.shape[0]
    if n < 2:
        return None, None
    d = a - b
    sd = d.std(ddof=1)
    mean = float(d.mean())
    if sd == 0.0:
        if mean > 0:
            return None, 0.0
        if mean < 0:
            return None, 1.0
        return None, 0.5
    t = mean / (sd / np.sqrt(n))
    return float(t), float(stats.t.sf(t, df=n - 1))


def summary_rows(records: dict):
    header = ["method", "kind", "n_seeds", "chosen_gammas"]
    for m in _METRICS:
        header += [f"{m}_mean", f"{m}_std", f"{m}_ci95"]
    rows = []
    for name in sorted(records):
        rec = records[name]
        gammas = ";".join(
            "" if r.chosen_gamma is None else repr(float(r.chosen_gamma))
            for r in rec.seed_results)
        row = [name, rec.method_config.get("kind", ""),
               len(rec.seed_results), gammas]
        for m in _METRICS:
            agg = rec.aggregate.get(m, {})
            row += [agg.get("mean"), agg.get("std"), agg.get("ci95")]
        rows.append(row)
    return header, rows


def _paired_series(rec_a: RunRecord, rec_b: RunRecord, metric: str):
    by_seed_a = {r.seed: getattr(r.test, metric) for r in rec_a.seed_results}
    by_seed_b = {r.seed: getattr(r.test, metric) for r in rec_b.seed_results}
    a, b = [], []
    for seed in sorted(set(by_seed_a) & set(by_seed_b)):
        va, vb = by_seed_a[seed], by_seed_b[seed]
        if va is None or vb is None:
            continue
        a.append(float(va))
        b.append(float(vb))
    return a, b


def significance_rows(records: dict):
    header = ["method_a", "method_b", "metric", "n_pairs", "mean_diff",
              "t_stat", "p_one_sided"]
    rows = []
    names = sorted(records)
    for name_a in names:
        for name_b in names:
            if name_a == name_b:
                continue
            for metric in _METRICS:
                a, b = _paired_series(records[name_a], records[name_b], metric)
                if len(a) < 2:
                    continue
                t, p = paired_one_sided_p(a, b)
                diff = float(np.mean(np.asarray(a) - np.asarray(b)))
                rows.append([name_a, name_b, metric, len(a), diff, t, p])
    return header, rows


def pr_curve_rows(record: RunRecord):
    header = ["seed", "threshold", "recall", "precision"]
    rows = []
    for r in record.seed_results:
        pr = r.test.pr
        for th, rc, pc in zip(pr.thresholds, pr.recall, pr.precision):
            rows.append([r.seed, float(th), float(rc), float(pc)])
    return header, rows


def _bin_table(record: RunRecord, rate: str) -> dict:
    """{(lo, hi): {seed: rate}} for one method, skipping absent rates."""
    out = {}
    for r in record.seed_results:
        for b in r.test.bins:
            v = getattr(b, rate)
            if v is None:
                continue
            out.setdefault((b.lo, b.hi), {})[r.seed] = float(v)
    return out


def delta_rate_rows(records: dict, baseline: str, rate: str):
    """Per-seed, per-bin rate difference of each method vs. the baseline."""
    header = ["method", "seed", "bin_lo_steps", "bin_hi_steps",
              f"delta_{rate}"]
    rows = []
    if baseline not in records:
        return header, rows
    base = _bin_table(records[baseline], rate)
    for name in sorted(records):
        if name == baseline:
            continue
        table = _bin_table(records[name], rate)
        for key in sorted(table, key=_bin_sort_key):
            if key not in base:
                continue
            for seed in sorted(set(table[key]) & set(base[key])):
                delta = table[key][seed] - base[key][seed]
                lo, hi = key
                rows.append([name, seed, lo, hi if np.isfinite(hi) else "inf",
                             delta])
    return header, rows


def delta_rate_mean_rows(records: dict, baseline: str, rate: str):
    header = ["method", "bin_lo_steps", "bin_hi_steps", "n_seeds",
              f"mean_delta_{rate}"]
    long_header, long_rows = delta_rate_rows(records, baseline, rate)
    grouped = {}
    for method, seed, lo, hi, delta in long_rows:
        grouped.setdefault((method, lo, hi), []).append(delta)
    rows = []
    for (method, lo, hi) in sorted(grouped, key=lambda k: (
            k[0], _bin_sort_key((k[1], np.inf if k[2] == "inf" else k[2])))):
        deltas = grouped[(method, lo, hi)]
        rows.append([method, lo, hi, len(deltas), float(np.mean(deltas))])
    return header, rows


def _bin_sort_key(key):
    lo, hi = key
    return (float(lo), float(hi))


def write_report(runs_dir: str, out_dir: str, baseline: str | None = None):
    """Write every report table for the records under runs_dir.

    The delta tables compare each method against ``baseline`` (default:
    method named "ce" if present, else the alphabetically first).
    Returns the list of files written.
    """
    records = load_records(runs_dir)
    if baseline is None:
        baseline = "ce" if "ce" in records else (sorted(records)[0]
                                                 if records else "")
    elif records and baseline not in records:
        raise InvalidInputError(
            f"baseline {baseline!r} not among the recorded methods: "
            f"{sorted(records)}"
        )
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def emit(name, header, rows):
        path = os.path.join(out_dir, name)
        _write_csv(path, header, rows)
        written.append(path)

    emit("summary.csv", *summary_rows(records))
    emit("significance.csv", *significance_rows(records))
    for name in sorted(records):
        emit(f"pr_curve_{name}.csv", *pr_curve_rows(records[name]))
    for rate in ("tpr", "tnr"):
        emit(f"delta_{rate}.csv", *delta_rate_rows(records, baseline, rate))
        emit(f"delta_{rate}_mean.csv",
             *delta_rate_mean_rows(records, baseline, rate))
    return written
