"""Report serialization, human-readable tables, merging and self-consistency audits."""

from __future__ import annotations

import json
import math
from pathlib import Path

from ..metrics import SEVERITIES, CorruptionGrid, corruption_aggregates

VOLATILE_KEYS = ("wall_clock_seconds",)


def to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def strip_volatile(report):
    """Copy without wall-clock fields (for determinism comparisons)."""
    if isinstance(report, dict):
        return {k: strip_volatile(v) for k, v in report.items() if k not in VOLATILE_KEYS}
    if isinstance(report, list):
        return [strip_volatile(v) for v in report]
    return report


def _table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def format_table(report: dict) -> str:
    """Aligned plain-text rendering of a report."""
    kind = report.get("kind")
    if kind == "collection":
        return "\n\n".join(format_table(r) for r in report["reports"])
    if kind == "detection":
        metrics = report["metrics"]
        rows = [[t["trial"]] + [t[m] for m in metrics] for t in report["trials"]]
        rows.append(["mean"] + [report["mean"][m] for m in metrics])
        title = f"{report['task']} detection, scorer {report['scorer']}"
        if "k" in report:
            title += f" (k={report['k']})"
        return title + "\n" + _table(["trial"] + metrics, rows)
    if kind == "corruption":
        sev = [str(s) for s in SEVERITIES]
        rows = [[c] + [row[s] for s in sev] + [report["per_type"][c]] for c, row in report["accuracy"].items()]
        text = (f"corruption accuracy (classifier {report['classifier']}, clean {report['clean_accuracy']:.4f})\n"
                + _table(["type"] + [f"s{s}" for s in sev] + ["mean drop"], rows))
        drops = [["mean drop"] + [report["per_severity"][s] for s in sev] + [report["overall"]]]
        return text + "\n" + _table(["severity"] + [f"s{s}" for s in sev] + ["overall"], drops)
    if kind == "probe":
        rows = [["top1", report["top1"]]]
        if "top5" in report:
            rows.append(["top5", report["top5"]])
        text = f"linear probe ({report['classes']} classes)\n" + _table(["metric", "value"], rows)
        for note in report.get("notes", []):
            text += f"\nnote: {note}"
        return text
    if kind == "export":
        header = ["image", "map"] + [f"{t:.0e}" for t in report["thresholds"]]
        rows = [[m["image"], m["map"]] + m["activated_fraction"] for m in report["maps"]]
        return f"activated-area fraction ({report['method']})\n" + _table(header, rows)
    if kind == "train":
        rows = [[i, v] for i, v in enumerate(report["epoch_losses"])]
        return f"training ({report['config']['objective']})\n" + _table(["epoch", "mean loss"], rows)
    return to_json(report)


def write_report(report: dict, json_path=None, text_path=None) -> None:
    if json_path:
        Path(json_path).write_text(to_json(report))
    if text_path:
        Path(text_path).write_text(format_table(report) + "\n")


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())


def merge_reports(reports: list[dict]) -> dict:
    flat = []
    for r in reports:
        flat.extend(r["reports"] if r.get("kind") == "collection" else [r])
    return {"kind": "collection", "reports": flat}


def audit(report: dict) -> list[str]:
    """Recompute every aggregate from the values it summarizes; return mismatches."""
    kind = report.get("kind")
    problems: list[str] = []
    if kind == "collection":
        for i, r in enumerate(report["reports"]):
            problems.extend(f"reports[{i}]: {p}" for p in audit(r))
    elif kind == "detection":
        trials = report["trials"]
        if not trials:
            problems.append("no per-trial values")
        for m in report["metrics"]:
            values = [t[m] for t in trials]
            if trials and report["mean"][m] != math.fsum(values) / len(values):
                problems.append(f"mean {m} {report['mean'][m]} != mean of trials")
    elif kind == "corruption":
        cells = {c: {int(s): v for s, v in row.items()} for c, row in report["accuracy"].items()}
        try:
            agg = corruption_aggregates(CorruptionGrid(report["clean_accuracy"], cells)).to_dict()
        except ValueError as exc:
            return [str(exc)]
        for key in ("drop", "per_type", "per_severity", "overall"):
            if agg[key] != report[key]:
                problems.append(f"{key} does not match the per-cell accuracies")
    elif kind == "export":
        for m in report["maps"]:
            curve = m["activated_fraction"]
            if any(b > a for a, b in zip(curve, curve[1:])):
                problems.append(f"image {m['image']} map {m['map']}: activated fraction increases with threshold")
    elif kind == "train":
        if report.get("final_loss") is not None and report["epoch_losses"][-1] != report["final_loss"]:
            problems.append("final_loss differs from the last epoch loss")
    return problems
