"""Confusion counting, DR/FR/F1 and per-bus distribution statistics.

Report file schema (UTF-8 text, stable ordering)::

    # report
    method=<name>
    dataset=<digest>
    threshold=<float>
    # aggregate
    f1=<percent, 6 dp>
    dr=<percent, 6 dp>
    fr=<percent, 6 dp>
    # per-bus
    bus,f1,dr,fr
    <label>,<percent>,<percent>,<percent>
    ...
    # counts
    bus,tp,fp,tn,fn
    ...
    # distribution <metric>
    min=...  q1=...  median=...  q3=...  max=...  mean=...  std=...  outliers=<label;label>

Rates are stored as fractions and written in percent. The ``# counts`` block
makes a report re-parse to exactly the in-memory :class:`MetricReport`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

METRICS = ("f1", "dr", "fr")


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-bus counts; arrays of shape (n_buses,)."""

    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray

    def total(self):
        return ConfusionCounts(*(np.array([a.sum()]) for a in (self.tp, self.fp, self.tn, self.fn)))

    @property
    def n_pairs(self):
        return int(self.tp.sum() + self.fp.sum() + self.tn.sum() + self.fn.sum())


def confusion(predictions, labels, threshold=0.5) -> ConfusionCounts:
    """Count outcomes per bus; a prediction is positive iff probability > threshold."""
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels).astype(bool)
    if p.shape != y.shape:
        raise ValueError(f"predictions {p.shape} and labels {y.shape} differ in shape")
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if p.ndim == 1:
        p, y = p[None, :], y[None, :]
    pos = p > threshold
    return ConfusionCounts(
        tp=(pos & y).sum(axis=0), fp=(pos & ~y).sum(axis=0),
        tn=(~pos & ~y).sum(axis=0), fn=(~pos & y).sum(axis=0),
    )


def _safe_div(num, den, default):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.full(np.broadcast(num, den).shape, float(default))
    np.divide(num, den, out=out, where=den > 0)
    return out


def rates(c: ConfusionCounts):
    """(DR, FR, F1) arrays; DR=1 if no positives, FR=0 if no negatives, F1=1 if TP=FP=FN=0."""
    dr = _safe_div(c.tp, c.tp + c.fn, 1.0)
    fr = _safe_div(c.fp, c.fp + c.tn, 0.0)
    f1 = _safe_div(2 * c.tp, 2 * c.tp + c.fp + c.fn, 1.0)
    return dr, fr, f1


def distribution_stats(values, labels=None):
    """Box-plot summary with linear-interpolation quantiles and 1.5 IQR outliers."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("distribution_stats needs at least one value")
    labels = list(labels) if labels is not None else [str(i) for i in range(v.size)]
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    return {
        "min": float(v.min()), "q1": float(q1), "median": float(med), "q3": float(q3),
        "max": float(v.max()), "mean": float(v.mean()), "std": float(v.std()),
        "outliers": [labels[i] for i in np.flatnonzero((v < lo) | (v > hi))],
    }


@dataclass
class MetricReport:
    counts: ConfusionCounts
    bus_labels: list[str]
    method: str = "fedgraph"
    dataset: str = ""
    threshold: float = 0.5
    per_bus: dict = field(init=False)
    aggregate: dict = field(init=False)
    distribution: dict = field(init=False)

    def __post_init__(self):
        dr, fr, f1 = rates(self.counts)
        self.per_bus = {"f1": f1, "dr": dr, "fr": fr}
        adr, afr, af1 = rates(self.counts.total())
        self.aggregate = {"f1": float(af1[0]), "dr": float(adr[0]), "fr": float(afr[0])}
        self.distribution = {m: distribution_stats(self.per_bus[m], self.bus_labels) for m in METRICS}

    def __eq__(self, other):
        if not isinstance(other, MetricReport):
            return NotImplemented
        same_counts = all(np.array_equal(getattr(self.counts, k), getattr(other.counts, k))
                          for k in ("tp", "fp", "tn", "fn"))
        return (same_counts and self.bus_labels == other.bus_labels and self.method == other.method
                and self.dataset == other.dataset and self.threshold == other.threshold)


def build_report(probabilities, labels, bus_labels=None, threshold=0.5, method="fedgraph",
                 dataset="") -> MetricReport:
    c = confusion(probabilities, labels, threshold)
    bus_labels = list(bus_labels) if bus_labels is not None else [str(i) for i in range(len(c.tp))]
    return MetricReport(c, bus_labels, method, dataset, threshold)


def _pct(x):
    return f"{100.0 * x:.6f}"


def format_report(report: MetricReport) -> str:
    lines = ["# report", f"method={report.method}", f"dataset={report.dataset}",
             f"threshold={report.threshold!r}", "# aggregate"]
    lines += [f"{m}={_pct(report.aggregate[m])}" for m in METRICS]
    lines += ["# per-bus", "bus,f1,dr,fr"]
    for i, lab in enumerate(report.bus_labels):
        lines.append(",".join([lab] + [_pct(report.per_bus[m][i]) for m in METRICS]))
    lines += ["# counts", "bus,tp,fp,tn,fn"]
    c = report.counts
    for i, lab in enumerate(report.bus_labels):
        lines.append(f"{lab},{int(c.tp[i])},{int(c.fp[i])},{int(c.tn[i])},{int(c.fn[i])}")
    for m in METRICS:
        d = report.distribution[m]
        lines.append(f"# distribution {m}")
        for key in ("min", "q1", "median", "q3", "max", "mean", "std"):
            lines.append(f"{key}={_pct(d[key])}")
        lines.append("outliers=" + ";".join(d["outliers"]))
    return "\n".join(lines) + "\n"


def export_report(report: MetricReport, path):
    Path(path).write_text(format_report(report))


def parse_report(path_or_text) -> MetricReport:
    text = Path(path_or_text).read_text() if isinstance(path_or_text, Path) or (
        isinstance(path_or_text, str) and "\n" not in path_or_text) else path_or_text
    section = None
    header = {}
    counts = []
    for line in text.splitlines():
        if not line:
            continue
        if line.startswith("#"):
            section = line[1:].strip().split()[0]
            continue
        if section == "report":
            key, _, value = line.partition("=")
            header[key] = value
        elif section == "counts" and not line.startswith("bus,"):
            lab, *vals = line.split(",")
            counts.append((lab, [int(v) for v in vals]))
    if not counts:
        raise ValueError("report has no counts block")
    arr = np.array([v for _, v in counts], dtype=np.int64)
    c = ConfusionCounts(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
    return MetricReport(c, [lab for lab, _ in counts], header.get("method", ""),
                        header.get("dataset", ""), float(header.get("threshold", 0.5)))


def comparison_table(reports) -> str:
    """Table of aggregate F1/DR/FR in percent, one row per method."""
    reports = list(reports)
    width = max([len("Method")] + [len(r.method) for r in reports])
    lines = [f"{'Method':>{width}} | {'F1':>6} {'DR':>6} {'FR':>6}", "-" * (width + 24)]
    for r in reports:
        a = r.aggregate
        lines.append(f"{r.method:>{width}} | {100 * a['f1']:6.2f} {100 * a['dr']:6.2f} {100 * a['fr']:6.2f}")
    return "\n".join(lines) + "\n"
