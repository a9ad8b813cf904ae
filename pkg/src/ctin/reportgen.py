"""Comparison tables across methods and relative-improvement percentages."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .errors import ConfigError
from .metrics import METRIC_NAMES, MetricReport


def improvement(base: float, ours: float) -> float:
    """Percentage reduction ``100 (base - ours) / base``; negative when ``ours`` is worse."""
    if not base > 0:
        raise ValueError(f"baseline value must be positive, got {base}")
    return 100.0 * (base - ours) / base


@dataclass
class ComparisonTable:
    """Cells keyed by ``(dataset, method, metric)`` plus the method the others are compared against."""

    cells: dict[tuple[str, str, str], float] = field(default_factory=dict)
    reference: str | None = None

    @property
    def datasets(self) -> list[str]:
        return sorted({k[0] for k in self.cells})

    @property
    def methods(self) -> list[str]:
        return sorted({k[1] for k in self.cells})

    @property
    def metrics(self) -> list[str]:
        present = {k[2] for k in self.cells}
        return [m for m in METRIC_NAMES if m in present] + sorted(present - set(METRIC_NAMES))

    def improvements(self) -> dict[tuple[str, str, str], float]:
        """Improvement of the reference method over every other method, per (dataset, baseline, metric)."""
        out = {}
        if self.reference is None:
            return out
        for (ds, method, metric), base in self.cells.items():
            ours = self.cells.get((ds, self.reference, metric))
            if ours is None or base <= 0:
                continue
            out[(ds, method, metric)] = improvement(base, ours)
        return out

    def _rows(self) -> tuple[list[str], list[list[str]]]:
        header = ["dataset", "method", *self.metrics]
        if self.reference is not None:
            header += [f"{m}_improvement_pct" for m in self.metrics]
        imp = self.improvements()
        rows = []
        for ds in self.datasets:
            for method in self.methods:
                if not any((ds, method, m) in self.cells for m in self.metrics):
                    continue
                row = [ds, method]
                row += [_fmt(self.cells.get((ds, method, m))) for m in self.metrics]
                if self.reference is not None:
                    row += [_fmt(imp.get((ds, method, m)), 2) for m in self.metrics]
                rows.append(row)
        return header, rows

    def to_markdown(self) -> str:
        header, rows = self._rows()
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        header, rows = self._rows()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()


def _fmt(x: float | None, digits: int = 4) -> str:
    return "" if x is None else f"{x:.{digits}f}"


def build_table(reports: list[MetricReport], reference: str | None = "ctin") -> ComparisonTable:
    """Collect aggregate metrics of each report into one table.

    ``reference`` names the method whose improvement over each other method
    is reported; it is dropped when no report carries that name.

    Raises
    ------
    ConfigError
        No reports, or two reports give different values for the same cell.
    """
    if not reports:
        raise ConfigError("build_table needs at least one report")
    cells: dict[tuple[str, str, str], float] = {}
    for rep in reports:
        for metric, value in rep.aggregate.items():
            if value is None:
                continue
            key = (rep.dataset, rep.method, metric)
            if key in cells and cells[key] != value:
                raise ConfigError(f"conflicting values for {key}: {cells[key]} vs {value}")
            cells[key] = value
    if reference is not None and not any(k[1] == reference for k in cells):
        reference = None
    return ComparisonTable(cells, reference)
