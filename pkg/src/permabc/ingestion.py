"""Observed-data loading: departmental epidemic CSV files and synthetic data.

The epidemic reader expects a long-format CSV with one row per department
and day (columns for the department code, the ISO date, and the daily
admission count; header names configurable). Rows are pivoted to one count
vector per department over a contiguous daily grid; missing days are filled
with 0 and flagged in a load report.
"""

from __future__ import annotations

import csv
import datetime
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LoadReport, ObservedData
from .exceptions import (
    ConfigurationError,
    EmptySelectionError,
    RowError,
    SchemaError,
)
from .models import Model, ParameterVector
from .validation import check_rng

DEFAULT_COLUMNS = {"department": "dep", "date": "jour", "count": "incid_hosp"}

# Corsica plus overseas territories; dropping them from the complete French
# listing leaves the 94 mainland departments
_NON_MAINLAND = {"2A", "2B"}


def _is_mainland(code: str) -> bool:
    code = code.strip()
    if code in _NON_MAINLAND:
        return False
    try:
        return int(code) < 971
    except ValueError:
        return False


@dataclass(frozen=True)
class EpidemicTable:
    """Daily admission counts per department on a contiguous date grid."""

    department_ids: tuple
    dates: tuple  # datetime.date, strictly increasing by one day
    counts: np.ndarray  # (K, T) nonnegative integers
    populations: dict | None = None
    report: LoadReport = field(default_factory=LoadReport, compare=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (len(self.department_ids), len(self.dates)):
            raise ValueError("counts shape does not match departments x dates")
        if np.any(counts < 0):
            raise ValueError("admission counts must be nonnegative")
        for a, b in zip(self.dates, self.dates[1:]):
            if (b - a).days != 1:
                raise ValueError("dates must be contiguous daily")
        object.__setattr__(self, "counts", counts)

    def write_csv(self, path, columns=None) -> None:
        cols = {**DEFAULT_COLUMNS, **(columns or {})}
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([cols["department"], cols["date"], cols["count"]])
            for i, dep in enumerate(self.department_ids):
                for j, date in enumerate(self.dates):
                    writer.writerow([dep, date.isoformat(), int(self.counts[i, j])])


def load_epidemic_csv(
    path,
    date_range=None,
    department_filter=None,
    columns=None,
    populations=None,
) -> EpidemicTable:
    """Load and pivot a long-format departmental admissions file.

    Parameters
    ----------
    path : str or Path
        CSV file with a header row.
    date_range : (date, date), optional
        Inclusive bounds; rows outside are dropped. Dates may be ISO strings.
    department_filter : optional
        ``"mainland-94"`` keeps mainland departments (drops Corsica and the
        overseas codes), or an explicit collection of department codes.
    columns : dict, optional
        Overrides for the header names (keys ``department``, ``date``,
        ``count``).
    populations : dict, optional
        Department code -> population size, attached for weighting.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    cols = {**DEFAULT_COLUMNS, **(columns or {})}
    bounds = None
    if date_range is not None:
        bounds = tuple(
            d if isinstance(d, datetime.date) else datetime.date.fromisoformat(d)
            for d in date_range
        )

    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for key in ("department", "date", "count"):
            if cols[key] not in header:
                raise SchemaError(f"missing required column {cols[key]!r}")
        for line_no, record in enumerate(reader, start=2):
            dep = (record[cols["department"]] or "").strip()
            try:
                date = datetime.date.fromisoformat(record[cols["date"]].strip())
            except (ValueError, AttributeError) as exc:
                raise RowError(
                    f"line {line_no}: unparseable date {record[cols['date']]!r}",
                    line_number=line_no,
                ) from exc
            try:
                count = int(record[cols["count"]])
                if count < 0:
                    raise ValueError
            except (ValueError, TypeError) as exc:
                raise RowError(
                    f"line {line_no}: unparseable count {record[cols['count']]!r}",
                    line_number=line_no,
                ) from exc
            if bounds and not bounds[0] <= date <= bounds[1]:
                continue
            rows.append((dep, date, count))

    if department_filter == "mainland-94":
        rows = [r for r in rows if _is_mainland(r[0])]
    elif department_filter is not None:
        allowed = set(department_filter)
        rows = [r for r in rows if r[0] in allowed]
    if not rows:
        raise EmptySelectionError("no rows left after filtering")

    departments = sorted({r[0] for r in rows})
    first = min(r[1] for r in rows)
    last = max(r[1] for r in rows)
    dates = tuple(
        first + datetime.timedelta(days=d) for d in range((last - first).days + 1)
    )
    index = {d: j for j, d in enumerate(dates)}
    counts = np.full((len(departments), len(dates)), -1, dtype=np.int64)
    dep_index = {d: i for i, d in enumerate(departments)}
    for dep, date, count in rows:
        counts[dep_index[dep], index[date]] = count

    report = LoadReport()
    missing = np.nonzero(counts < 0)
    for i, j in zip(*missing):
        report.flag_gap(departments[i], dates[j])
    counts[counts < 0] = 0

    pops = None
    if populations is not None:
        pops = {d: int(populations[d]) for d in departments if d in populations}
    return EpidemicTable(
        department_ids=tuple(departments),
        dates=dates,
        counts=counts,
        populations=pops,
        report=report,
    )


def to_observed_data(table: EpidemicTable, weighting: str = "unit") -> ObservedData:
    """Convert an epidemic table to an observed dataset.

    ``weighting="population-proportional"`` sets each department's weight
    proportional to its population, normalized to mean 1.
    """
    counts = table.counts.astype(float)
    if weighting == "unit":
        return ObservedData(counts)
    if weighting == "population-proportional":
        if not table.populations:
            raise ConfigurationError(
                "population-proportional weighting needs per-department populations"
            )
        try:
            pops = np.array([table.populations[d] for d in table.department_ids], dtype=float)
        except KeyError as exc:
            raise ConfigurationError(f"missing population for department {exc}") from exc
        weights = pops / pops.mean()
        return ObservedData(counts, weights=weights)
    raise ConfigurationError(f"unknown weighting policy {weighting!r}")


@dataclass(frozen=True)
class SyntheticDataset:
    """Observed data generated at a known parameter value."""

    observed: ObservedData
    truth: ParameterVector


def draw_true_parameters(
    model: Model, n_compartments: int, rng, n_outliers: int = 0, tail_mass: float = 0.001
) -> ParameterVector:
    """Prior draw with some local blocks forced into the prior tails.

    Outlier blocks are placed beyond the ``tail_mass`` / ``1 - tail_mass``
    prior quantiles, alternating between the two tails.
    """
    rng = check_rng(rng)
    if not 0 <= n_outliers <= n_compartments:
        raise ConfigurationError("outlier count out of range")
    theta = model.sample_prior(n_compartments, rng)
    if n_outliers == 0:
        return theta
    locals_ = theta.local_blocks.copy()
    picks = rng.choice(n_compartments, size=n_outliers, replace=False)
    for idx, slot in enumerate(np.sort(picks)):
        q = rng.uniform(0.0, tail_mass)
        locals_[slot] = model.local_prior_ppf(q if idx % 2 else 1.0 - q)
    return ParameterVector(theta.global_block, locals_)


def generate_synthetic(model: Model, true_theta: ParameterVector, rng) -> SyntheticDataset:
    """Simulate one dataset at a fixed truth, keeping the truth alongside."""
    rng = check_rng(rng)
    z = model.simulate_compartments(true_theta.global_block, true_theta.local_blocks, rng)
    return SyntheticDataset(observed=ObservedData(z), truth=true_theta)
