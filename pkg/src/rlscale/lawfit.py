"""Log-linear scaling-law fits and the slope/intercept consistency check.

Fits have the form ``ln y = -k ln x + E`` (natural logs) by ordinary least
squares. If compute and unique data are linked by ``C = N * D * phi`` with
a constant ``phi``, the compute-law and data-law fits of the same losses
share the slope and their intercepts differ by ``k ln(N phi)``; the
checker measures both gaps on real run sets.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, FitError
from .runlog import RunSet, run_series

AXIS_TARGET = {"flops": "C", "data": "D", "steps": "S"}
Y_TARGET = {"loss": "loss", "length": "response_length"}

EXACT_PHI_DISPERSION = 1e-9

TABLE_HEADER = ("model_n", "variant", "k", "E", "r2", "n_points")


@dataclass
class FitResult:
    k: float
    E: float
    r2: float
    n_points: int
    target_x: str = "C"
    target_y: str = "loss"
    model_n: int = 0
    variant: str = ""
    excluded: int = 0
    burn_in: float = 0.0
    error: str | None = None

    def predict(self, x):
        return np.exp(-self.k * np.log(x) + self.E)


def fit_loglinear(points: Sequence[tuple[float, float]]) -> FitResult:
    """OLS of ln y on ln x; ``k`` is the negated slope."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        raise FitError(f"need at least 2 points, got {len(pts)}")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise FitError("log-linear fit needs strictly positive finite coordinates")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    mx, my = lx.mean(), ly.mean()
    dx = lx - mx
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise FitError("all x values are equal")
    slope = float(dx @ (ly - my)) / sxx
    intercept = my - slope * mx
    resid = ly - (intercept + slope * lx)
    sst = float(((ly - my) ** 2).sum())
    ssr = float(resid @ resid)
    r2 = 1.0 - ssr / sst if sst > 0 else 1.0
    return FitResult(k=-slope, E=float(intercept), r2=r2, n_points=len(pts))


def sum_sq_log_residuals(points, k: float, E: float) -> float:
    pts = np.asarray(points, dtype=np.float64)
    resid = np.log(pts[:, 1]) - (-k * np.log(pts[:, 0]) + E)
    return float(resid @ resid)


def prepare_points(series: Sequence[tuple[float, float]], burn_in: float = 0.0,
                   loss_floor: float | None = None) -> tuple[list[tuple[float, float]], int]:
    """Drop the first ``burn_in`` fraction of points and non-positive y.

    With ``loss_floor`` set, y values below it are raised to the floor
    instead of being excluded. Returns (points, number excluded for y <= 0).
    """
    if not 0.0 <= burn_in < 1.0:
        raise FitError("burn_in must be in [0, 1)")
    pts = list(series)[int(math.floor(burn_in * len(series))):]
    kept, excluded = [], 0
    for x, y in pts:
        if loss_floor is not None:
            y = max(y, loss_floor)
        if y <= 0:
            excluded += 1
            continue
        kept.append((x, y))
    return kept, excluded


def fit_per_model(runset: RunSet, x_axis: str, y: str = "loss", burn_in: float = 0.0,
                  loss_floor: float | None = None) -> list[FitResult]:
    """One pooled fit per (model_n, variant) group, sorted by model_n.

    Burn-in is applied per run before pooling. A group that cannot be fit
    yields a row with ``error`` set and NaN coefficients.
    """
    rows = []
    for (n, variant), runs in sorted(runset.groups().items()):
        pooled, excluded = [], 0
        for run in runs:
            floor = loss_floor
            if floor == "auto":
                floor = 1.0 / (2 * run.manifest.tags.get("eval_size", 1))
            pts, ex = prepare_points(run_series(run, x_axis, y), burn_in, floor)
            pooled += pts
            excluded += ex
        try:
            fit = fit_loglinear(pooled)
        except FitError as exc:
            fit = FitResult(k=math.nan, E=math.nan, r2=math.nan, n_points=len(pooled), error=str(exc))
        fit.target_x = AXIS_TARGET[x_axis]
        fit.target_y = Y_TARGET[y]
        fit.model_n = n
        fit.variant = variant
        fit.excluded = excluded
        fit.burn_in = burn_in
        rows.append(fit)
    return rows


def plot_data(runset: RunSet, fit: FitResult, x_axis: str, y: str = "loss") -> list[tuple[float, float, float]]:
    """(x, y, fitted y) triples for every point of the fit's group."""
    out = []
    for run in runset:
        if (run.manifest.n_nonembed, run.manifest.variant) != (fit.model_n, fit.variant):
            continue
        for x, yv in run_series(run, x_axis, y):
            fy = float(fit.predict(x)) if fit.error is None else math.nan
            out.append((x, yv, fy))
    return sorted(out)


@dataclass
class ConsistencyReport:
    k_gap: float
    intercept_residual: float
    phi: float
    phi_dispersion: float
    model_n: int = 0
    variant: str = ""
    k_c: float = math.nan
    k_d: float = math.nan
    E_c: float = math.nan
    E_d: float = math.nan
    n_points: int = 0

    @property
    def exact(self) -> bool:
        return self.phi_dispersion < EXACT_PHI_DISPERSION


def estimate_phi(runset: RunSet, n: int, variant: str | None = None) -> tuple[float, float, int]:
    """Mean of per-eval-point ``C / (N D)`` and its relative spread (max-min)/mean."""
    values = []
    for run in runset:
        if run.manifest.n_nonembed != n or (variant is not None and run.manifest.variant != variant):
            continue
        for rec in run.records:
            if rec.eval_loss is None or rec.unique_samples_seen <= 0 or rec.cumulative_flops <= 0:
                continue
            values.append(rec.cumulative_flops / (n * rec.unique_samples_seen))
    if not values:
        raise FitError(f"no evaluation points to estimate phi for N={n}")
    v = np.asarray(values)
    mean = float(v.mean())
    return mean, float((v.max() - v.min()) / mean), len(values)


def check_consistency(fit_c: FitResult, fit_d: FitResult, n: int, runset: RunSet) -> ConsistencyReport:
    if fit_c.target_x != "C" or fit_d.target_x != "D":
        raise DataError("check_consistency needs a compute fit and a data fit")
    if (fit_c.model_n, fit_c.variant) != (fit_d.model_n, fit_d.variant) or fit_c.model_n != n:
        raise DataError("compute and data fits come from different groups")
    phi, dispersion, count = estimate_phi(runset, n, fit_c.variant)
    k = fit_d.k
    return ConsistencyReport(
        k_gap=abs(fit_c.k - fit_d.k),
        intercept_residual=abs(fit_c.E - fit_d.E - k * math.log(n * phi)),
        phi=phi,
        phi_dispersion=dispersion,
        model_n=n,
        variant=fit_c.variant,
        k_c=fit_c.k,
        k_d=fit_d.k,
        E_c=fit_c.E,
        E_d=fit_d.E,
        n_points=count,
    )


def _fmt(value: float) -> str:
    if value is None or math.isnan(value):
        return "nan"
    text = f"{value:.4f}"
    return "0.0000" if text == "-0.0000" else text


def render_table(rows: Sequence[FitResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_HEADER)
    for r in rows:
        writer.writerow([r.model_n, r.variant, _fmt(r.k), _fmt(r.E), _fmt(r.r2), r.n_points])
    return buf.getvalue()


def emit_table(rows: Sequence[FitResult], destination) -> str:
    """Write the comma-separated fit table (4-decimal cells); returns the text."""
    text = render_table(rows)
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        Path(destination).write_text(text, encoding="utf-8")
    return text


def parse_table(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != TABLE_HEADER:
        raise DataError(f"unexpected table header {reader.fieldnames}")
    rows = []
    for row in reader:
        rows.append({
            "model_n": int(row["model_n"]),
            "variant": row["variant"],
            "k": float(row["k"]),
            "E": float(row["E"]),
            "r2": float(row["r2"]),
            "n_points": int(row["n_points"]),
        })
    return rows
