"""Phase reports: rows of measurements plus pass/fail checks.

Written as JSON (everything, including per-row audit snapshots), CSV (the
flat scalar columns, ready for plotting) and a plain-text table.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class PhaseReport:
    phase: str
    rows: list[dict] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    audits: list[dict] = field(default_factory=list)  # one snapshot per row

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def add_row(self, row: dict, audit: dict | None = None) -> None:
        self.rows.append(row)
        self.audits.append(audit or {})

    def note(self, text: str) -> None:
        self.notes.append(text)

    def columns(self) -> list[str]:
        cols: list[str] = []
        for r in self.rows:
            for k, v in r.items():
                if k not in cols and _scalar(v):
                    cols.append(k)
        return cols

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "passed": self.passed,
            "checks": self.checks,
            "summary": self.summary,
            "notes": self.notes,
            "rows": [dict(r, audit=a) for r, a in zip(self.rows, self.audits)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default)

    def write_csv(self, path) -> None:
        cols = self.columns()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r.get(k) for k in cols})

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"json": out / "report.json", "csv": out / "report.csv", "table": out / "report.txt"}
        paths["json"].write_text(self.to_json())
        self.write_csv(paths["csv"])
        paths["table"].write_text(self.table() + "\n")
        return paths

    def table(self, columns: list[str] | None = None) -> str:
        cols = columns or self.columns()
        cells = [[_fmt(r.get(c)) for c in cols] for r in self.rows]
        widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(cols)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
        lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
        for name, ok in self.checks.items():
            lines.append(f"{'PASS' if ok else 'FAIL'}  {name}")
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)


def load_report(path) -> dict:
    return json.loads(Path(path).read_text())


def _scalar(v) -> bool:
    return v is None or isinstance(v, (int, float, str, bool))


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        if v == 0 or math.isnan(v):
            return f"{v:g}"
        if abs(v) >= 1e6 or abs(v) < 1e-3:
            return f"{v:.4g}"
        return f"{v:.4f}".rstrip("0").rstrip(".")
    return str(v)


def _json_default(o):
    if hasattr(o, "item"):  # numpy scalars
        return o.item()
    if hasattr(o, "tolist"):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
