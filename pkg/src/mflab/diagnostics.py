"""Post-processing of trajectories: MBR gap, moment bounds, convergence verdicts, sphere probe."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .field import PotentialField, preactivations
from .flow import TrajectoryRecord

VERDICTS = ("converging-to-MBR", "stalled", "growing-moments", "inconclusive")

DEFAULT_THRESHOLDS = {
    "gap_sigmas": 3.0,  # risk gap tolerance in combined standard errors
    "bound_sigmas": 3.0,  # statistical slack on the moment bounds
    "trend_fraction": 0.5,  # tail fraction of records used for the sup_g trend
    "stall_fraction": 0.2,  # final sup_g above this fraction of its maximum counts as bounded away from 0
    "min_records": 3,
}


def _sigma(rec: TrajectoryRecord, i: int) -> float:
    se = rec.risk_se[i] if i < len(rec.risk_se) else float("nan")
    return 0.0 if not np.isfinite(se) else float(se)


def mbr_gap(rec: TrajectoryRecord, mbr: float, mbr_se: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """Series ``risk(t) - mbr`` and its combined standard error."""
    gap = rec.array("risk") - mbr
    se = np.array([_sigma(rec, i) for i in range(len(rec))])
    return gap, np.sqrt(se**2 + mbr_se**2)


def sublinear_bound_excess(rec: TrajectoryRecord, sigmas: float = 3.0) -> np.ndarray:
    """``N(t) - 2[N0 + R0 t] - tol(t)`` per record; positive entries violate the bound.

    The tolerance propagates the standard error of the initial risk estimate.
    """
    t, N, R = rec.array("t"), rec.array("N"), rec.array("risk")
    t = t - t[0]
    tol = 2.0 * sigmas * _sigma(rec, 0) * t + 1e-12 * (1.0 + N[0])
    return N - 2.0 * (N[0] + R[0] * t) - tol


def refined_bound_excess(rec: TrajectoryRecord, sigmas: float = 3.0) -> float:
    """Max over recorded ``T < t`` of ``N(t) - 2[N(T) + (t - T)(R(T) - R(t))] - tol``."""
    t, N, R = rec.array("t"), rec.array("N"), rec.array("risk")
    se = np.array([_sigma(rec, i) for i in range(len(rec))])
    if len(t) < 2:
        return -np.inf
    Ti, ti = np.triu_indices(len(t), k=1)
    span = t[ti] - t[Ti]
    tol = 2.0 * sigmas * span * np.hypot(se[Ti], se[ti]) + 1e-12 * (1.0 + N[Ti])
    excess = N[ti] - 2.0 * (N[Ti] + span * (R[Ti] - R[ti])) - tol
    return float(np.max(excess))


def log_slope(t: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of ``log y`` against ``t``."""
    t, y = np.asarray(t, dtype=float), np.asarray(y, dtype=float)
    keep = y > 0
    if np.sum(keep) < 2 or np.ptp(t[keep]) == 0:
        return float("nan")
    return float(np.polyfit(t[keep], np.log(y[keep]), 1)[0])


def exponential_slope(rec: TrajectoryRecord, fraction: float = 0.5) -> float:
    """Slope of ``log N`` over the last ``fraction`` of the frozen segment."""
    frozen = np.asarray(rec.frozen, dtype=bool)
    if not frozen.any():
        return float("nan")
    t, N = rec.array("t")[frozen], rec.array("N")[frozen]
    start = t[0] + (1.0 - fraction) * (t[-1] - t[0])
    tail = t >= start
    return log_slope(t[tail], N[tail])


@dataclass
class ConvergenceReport:
    mbr: float
    mbr_se: float
    risk_gap: float
    gap_sigma: float
    sup_g_trend: float
    sup_g_decay: float
    bound_excess: float
    verdict: str
    thresholds: Dict[str, float] = field(default_factory=dict)

    def rows(self) -> List[Tuple[str, object]]:
        out = [("mbr", self.mbr), ("mbr_se", self.mbr_se), ("risk_gap", self.risk_gap),
               ("gap_sigma", self.gap_sigma), ("sup_g_trend", self.sup_g_trend),
               ("sup_g_decay", self.sup_g_decay), ("bound_excess", self.bound_excess)]
        out += [(f"threshold.{k}", v) for k, v in self.thresholds.items()]
        return out + [("verdict", self.verdict)]

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["key", "value"])
            for k, v in self.rows():
                writer.writerow([k, f"{v:.17g}" if isinstance(v, float) else v])


def convergence_report(rec: TrajectoryRecord, mbr: float, mbr_se: float = 0.0,
                       **thresholds) -> ConvergenceReport:
    """Classify a trajectory.

    * ``growing-moments``: some ``N(t)`` exceeds the sublinear bound beyond its tolerance.
    * ``converging-to-MBR``: final gap within ``gap_sigmas`` and negative tail trend of ``log sup_g``.
    * ``stalled``: final gap above tolerance while ``sup_g`` stays above ``stall_fraction`` of its max.
    * ``inconclusive``: anything else, including records too short for a trend.
    """
    th = dict(DEFAULT_THRESHOLDS)
    unknown = set(thresholds) - set(th)
    if unknown:
        raise ValueError(f"unknown thresholds {sorted(unknown)}")
    th.update(thresholds)
    nan = float("nan")
    if len(rec) < th["min_records"] or rec.times[-1] <= rec.times[0]:
        return ConvergenceReport(mbr, mbr_se, nan, nan, nan, nan, nan, "inconclusive", th)
    gap, sigma = mbr_gap(rec, mbr, mbr_se)
    t, sup_g = rec.array("t"), rec.array("sup_g")
    tail = t >= t[0] + (1.0 - th["trend_fraction"]) * (t[-1] - t[0])
    trend = log_slope(t[tail], sup_g[tail])
    decay = float(np.max(sup_g) / sup_g[-1]) if sup_g[-1] > 0 else float("inf")
    excess = float(np.max(sublinear_bound_excess(rec, th["bound_sigmas"])))
    close = gap[-1] <= th["gap_sigmas"] * sigma[-1]
    if excess > 0:
        verdict = "growing-moments"
    elif close and trend < 0:
        verdict = "converging-to-MBR"
    elif not close and sup_g[-1] > th["stall_fraction"] * np.max(sup_g):
        verdict = "stalled"
    else:
        verdict = "inconclusive"
    return ConvergenceReport(mbr, mbr_se, float(gap[-1]), float(sigma[-1]), trend, decay,
                             excess, verdict, th)


def write_verdict(path: Union[str, Path], verdict: str) -> None:
    if verdict not in VERDICTS:
        raise ValueError(f"unknown verdict {verdict!r}")
    Path(path).write_text(f"verdict={verdict}\n")


# --------------------------------------------------------------------------- sphere probe

@dataclass
class SardReport:
    values: np.ndarray
    tangential_norms: np.ndarray
    identity_residuals: np.ndarray  # NaN where the a-identity is skipped
    bin_edges: np.ndarray
    bin_counts: np.ndarray
    near_critical_counts: np.ndarray
    near_critical_threshold: float

    @property
    def identity_max(self) -> float:
        r = self.identity_residuals[np.isfinite(self.identity_residuals)]
        return float(np.max(r)) if r.size else 0.0

    def rows(self):
        for i, (c, k) in enumerate(zip(self.bin_counts, self.near_critical_counts)):
            yield [self.bin_edges[i], self.bin_edges[i + 1], int(c), int(k)]

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["g_low", "g_high", "count", "near_critical"])
            for lo, hi, c, k in self.rows():
                writer.writerow([f"{lo:.17g}", f"{hi:.17g}", c, k])


def kink_free(field: PotentialField, grid: np.ndarray, tol: float) -> np.ndarray:
    """Grid points with ``|w.x_j + b| >= tol |(w, b)|`` for every batch sample."""
    Z = np.abs(preactivations(grid, field.batch.xs))
    return np.all(Z >= tol * np.linalg.norm(grid[:, 1:], axis=1), axis=0)


def sard_probe(field: PotentialField, grid: np.ndarray, bins: int = 20, a_min: float = 1e-3,
               kink_tol: float = 1e-6, critical_rel: float = 1e-3) -> SardReport:
    """Potential on unit-sphere grid points with its tangential gradient ``(I - theta theta^T) V``.

    The a-component obeys ``grad^S_a g = (1/a - 2a) g``, which vanishes exactly
    on ``a^2 = 1/2``.  Points with ``|a| < a_min`` or a sample within
    ``kink_tol`` of a ReLU kink skip the identity.  Level bins of ``g`` count
    points whose tangential gradient lies below ``critical_rel`` times its median.
    """
    grid = np.array(grid, dtype=float, ndmin=2)
    if bins < 1:
        raise ValueError("bins must be positive")
    if not np.allclose(np.linalg.norm(grid, axis=1), 1.0, atol=1e-12):
        raise ValueError("grid points must have unit norm")
    if np.any(-grid[:, 0] ** 2 + np.sum(grid[:, 1:] ** 2, axis=1) < -1e-12):
        raise ValueError("grid points must lie in the closed cone")
    g = field.potential(grid)
    V = field.potential_grad(grid)
    tang = V - np.sum(grid * V, axis=1, keepdims=True) * grid
    tnorm = np.linalg.norm(tang, axis=1)
    a = grid[:, 0]
    ok = (np.abs(a) >= a_min) & kink_free(field, grid, kink_tol)
    resid = np.full(len(grid), np.nan)
    resid[ok] = np.abs(tang[ok, 0] - (1.0 / a[ok] - 2.0 * a[ok]) * g[ok])
    lo, hi = float(np.min(g)), float(np.max(g))
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    which = np.clip(np.searchsorted(edges, g, side="right") - 1, 0, bins - 1)
    threshold = critical_rel * float(np.median(tnorm))
    counts = np.bincount(which, minlength=bins)
    near = np.bincount(which, weights=(tnorm < threshold).astype(float), minlength=bins).astype(int)
    return SardReport(g, tnorm, resid, edges, counts, near, threshold)
