"""Parameter sweeps of the ground state and log-log power-law fits."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .hermite_spectral import DEFAULT_TOL, adaptive_ground_state, derived_norms

CSV_HEADER = (
    "tau", "k", "lambda", "lambda_tau_k", "sigma", "N_used", "residual",
    "ynorm", "dnorm", "overlap", "gnorm", "sup_near0",
)
FIT_TAU_MIN = 2.0**6


@dataclass(frozen=True)
class ScalingRow:
    tau: float
    k: int
    lam: float = math.nan
    lambda_tau_k: float = math.nan
    sigma: float = math.nan
    N_used: int = 0
    residual: float = math.nan
    ynorm: float = math.nan
    dnorm: float = math.nan
    overlap: float = math.nan
    gnorm: float = math.nan
    sup_near0: float = math.nan
    supnorm: float = math.nan
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    r_squared: float
    range: tuple[float, float]
    n_points: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["range"] = list(self.range)
        return d


def sigma_of(tau: float, lam: float) -> float:
    """Positive root of ``sigma^2 = tau * lam``."""
    if lam < 0:
        raise ValueError(f"negative eigenvalue {lam!r}")
    return math.sqrt(tau * lam)


def fit_power_law(points: Iterable[tuple[float, float]]) -> PowerLawFit:
    """Ordinary least squares of ``log value`` against ``log tau``."""
    pts = sorted(points)
    if len(pts) < 3:
        raise ValueError("a power-law fit needs at least 3 points")
    t = np.array([p[0] for p in pts], dtype=float)
    v = np.array([p[1] for p in pts], dtype=float)
    if np.any(v <= 0) or np.any(t <= 0):
        raise ValueError("power-law fit needs positive abscissae and values")
    lx, ly = np.log(t), np.log(v)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    r2 = min(max(r2, 0.0), 1.0)
    return PowerLawFit(float(slope), float(intercept), r2, (float(t[0]), float(t[-1])), len(pts))


def scaling_row(k: int, tau: float, tol: float = DEFAULT_TOL) -> ScalingRow:
    try:
        gs = adaptive_ground_state(k, tau, tol)
        prof = derived_norms(gs.coeffs)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        return ScalingRow(tau=float(tau), k=k, error=f"{type(exc).__name__}: {exc}")
    return ScalingRow(
        tau=float(tau), k=k, lam=gs.lam, lambda_tau_k=gs.lam * float(tau) ** k,
        sigma=sigma_of(tau, gs.lam), N_used=gs.N, residual=gs.residual,
        ynorm=prof.ynorm, dnorm=prof.dnorm, overlap=prof.overlap, gnorm=prof.gnorm,
        sup_near0=prof.sup_near0, supnorm=prof.supnorm,
    )


def sweep(k: int, tau_grid: Sequence[float], tol: float = DEFAULT_TOL,
          threads: int = 1) -> list[ScalingRow]:
    """One row per tau, sorted by tau. Failed solves become rows with ``error`` set."""
    taus = sorted(float(t) for t in tau_grid)
    if any(t < 1 for t in taus):
        raise ValueError("sweep requires tau >= 1")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(lambda t: scaling_row(k, t, tol), taus))
    return [scaling_row(k, t, tol) for t in taus]


def geometric_grid(tau_min: float, tau_max: float, points: int) -> list[float]:
    if points < 1:
        raise ValueError("points must be positive")
    if points == 1:
        return [float(tau_min)]
    return [float(v) for v in np.geomspace(tau_min, tau_max, points)]


def default_grid() -> list[float]:
    return [2.0**j for j in range(15)]


def fits(rows: Sequence[ScalingRow], tau_min: float = FIT_TAU_MIN) -> dict[str, PowerLawFit]:
    good = [r for r in rows if r.ok and r.tau >= tau_min]
    return {
        "lambda_fit": fit_power_law((r.tau, r.lam) for r in good),
        "sigma_fit": fit_power_law((r.tau, r.sigma) for r in good),
    }


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: Sequence[ScalingRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        d = r.to_dict()
        w.writerow([_fmt(d[h]) for h in CSV_HEADER])
    return buf.getvalue()


def report(rows: Sequence[ScalingRow], tau_min: float = FIT_TAU_MIN) -> dict:
    """JSON-ready report: rows, both fits, and empirical bounds on ``lambda tau^k``."""
    good = [r for r in rows if r.ok]
    out: dict = {"rows": [r.to_dict() for r in rows]}
    try:
        f = fits(rows, tau_min)
        out.update({name: fit.to_dict() for name, fit in f.items()})
    except ValueError as exc:
        out["fit_error"] = str(exc)
    if good:
        ltk = [r.lambda_tau_k for r in good]
        out["lambda_tau_k_inf"] = min(ltk)
        out["lambda_tau_k_sup"] = max(ltk)
        out["max_ynorm"] = max(r.ynorm for r in good)
        out["max_dnorm"] = max(r.dnorm for r in good)
        out["max_supnorm"] = max(r.supnorm for r in good)
    out["failed"] = [r.tau for r in rows if not r.ok]
    return out


ROW_FIELDS = tuple(f.name for f in fields(ScalingRow))
