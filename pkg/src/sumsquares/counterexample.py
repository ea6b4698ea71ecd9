"""Separated solutions ``u = e^{i tau t} e^{sigma s} psi(sqrt(tau) x)`` on 3-D grids.

Provides finite-difference application of a polynomial-coefficient operator
to sampled fields, sup norms over boxes, and the ratio study showing that
``sup_V |d_t u| / sup_V' |u|`` grows without bound while the operator
annihilates every member of the family.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .hermite_spectral import adaptive_ground_state, eval_eigenfunction, ground_state_for
from .scaling_analysis import PowerLawFit, fit_power_law, sigma_of
from .symbolic_fields import (
    DiffOp, UsageError, counterexample_fields, lbar_and_l, reduced_operator, sum_of_squares,
)

AXES = ("x", "t", "s")
FALSIFY_SLOPE = 0.95
MIN_POINTS_PER_PERIOD = 10
_BOX_EPS = 1e-12
# Evaluation box for residual studies; widths are powers of two so h-halving nests.
PDE_BOX_BOUNDS = ((-0.5, 0.5), (-1 / 16, 1 / 16), (-0.5, 0.5))


@dataclass(frozen=True)
class Box3:
    """Closed axis-aligned box in (x, t, s)."""

    bounds: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        if len(self.bounds) != 3:
            raise UsageError("Box3 needs three intervals")
        for lo, hi in self.bounds:
            if not hi > lo:
                raise UsageError(f"degenerate interval [{lo}, {hi}]")

    @classmethod
    def cube(cls, half: float) -> Box3:
        return cls(((-half, half),) * 3)

    def contains_box(self, other: Box3) -> bool:
        return all(lo <= olo + _BOX_EPS and ohi <= hi + _BOX_EPS
                   for (lo, hi), (olo, ohi) in zip(self.bounds, other.bounds))

    def contains_point(self, p) -> bool:
        return all(lo - _BOX_EPS <= v <= hi + _BOX_EPS for (lo, hi), v in zip(self.bounds, p))

    def to_list(self):
        return [list(b) for b in self.bounds]


PDE_BOX = Box3(PDE_BOX_BOUNDS)


def check_nested(V: Box3, Vprime: Box3):
    if not Vprime.contains_box(V):
        raise UsageError("V must lie inside V'")
    if not V.contains_point((0.0, 0.0, 0.0)):
        raise UsageError("V must contain the origin")


@dataclass(frozen=True)
class Grid3:
    """Uniform tensor grid; ``counts[i]`` points on ``bounds[i]``."""

    bounds: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    counts: tuple[int, int, int]

    def __post_init__(self):
        for (lo, hi), n in zip(self.bounds, self.counts):
            if n < 1 or (n > 1 and not hi > lo):
                raise UsageError("bad grid axis")

    @classmethod
    def covering(cls, box: Box3, spacing: Sequence[float], margin: int = 0) -> Grid3:
        """Grid on ``box`` (plus ``margin`` extra points per side) with spacing at most as given.

        Each axis has an odd point count so that its midpoint is a node.
        """
        bounds, counts = [], []
        for (lo, hi), h in zip(box.bounds, spacing):
            cells = max(2, math.ceil((hi - lo) / h - 1e-9))
            cells += cells % 2
            hh = (hi - lo) / cells
            bounds.append((lo - margin * hh, hi + margin * hh))
            counts.append(cells + 1 + 2 * margin)
        return cls(tuple(bounds), tuple(counts))

    def axis(self, i: int) -> np.ndarray:
        lo, hi = self.bounds[i]
        return np.linspace(lo, hi, self.counts[i])

    def spacing(self, i: int) -> float:
        lo, hi = self.bounds[i]
        return (hi - lo) / (self.counts[i] - 1) if self.counts[i] > 1 else math.inf

    @property
    def shape(self):
        return tuple(self.counts)

    def box(self) -> Box3:
        return Box3(self.bounds)

    def to_dict(self):
        return {"bounds": [list(b) for b in self.bounds], "shape": list(self.counts),
                "axes": list(AXES)}


@dataclass(frozen=True)
class Field3:
    grid: Grid3
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise UsageError("sample array does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise UsageError("non-finite samples")


def sample_field(fn: Callable, grid: Grid3, provenance=None) -> Field3:
    """Sample ``fn(X, T, S)`` (broadcasting arrays) on ``grid``."""
    X, T, S = np.meshgrid(grid.axis(0), grid.axis(1), grid.axis(2), indexing="ij")
    vals = np.asarray(fn(X, T, S), dtype=complex)
    return Field3(grid, np.broadcast_to(vals, grid.shape).copy(), dict(provenance or {}))


@dataclass(frozen=True)
class SeparatedSolution:
    """Data defining ``u = e^{i tau t} e^{sigma s} psi(sqrt(tau) x)``."""

    k: int
    tau: float
    lam: float
    sigma: float
    coeffs: np.ndarray

    def __call__(self, X, T, S):
        psi = eval_eigenfunction(self.coeffs, math.sqrt(self.tau) * np.asarray(X, dtype=float))
        return np.exp(1j * self.tau * T) * np.exp(self.sigma * S) * psi

    def provenance(self) -> dict:
        return {"k": self.k, "tau": self.tau, "sigma": self.sigma, "lambda": self.lam}


def separated_solution(k: int, tau: float, fields=None, N: int = 256) -> SeparatedSolution:
    """Ground state and growth rate for the default family or a supplied field list.

    For custom ``fields`` the reduced operator is built symbolically and solved
    at fixed truncation ``N``.
    """
    if fields is None:
        gs = adaptive_ground_state(k, tau)
    else:
        gs = ground_state_for(reduced_operator(fields, tau), N)
    return SeparatedSolution(k, float(tau), gs.lam, sigma_of(tau, gs.lam), gs.coeffs)


def build_u(k: int, tau: float, grid: Grid3, sol: SeparatedSolution | None = None) -> Field3:
    if tau < 1:
        raise UsageError("tau must be >= 1")
    sol = sol or separated_solution(k, tau)
    return sample_field(sol, grid, sol.provenance())


def _stencil(a: np.ndarray, axis: int, m: int, h: float) -> np.ndarray:
    """Second-order centred m-th derivative (m in 0..2) along ``axis``; shrinks the axis by 2."""
    n = a.shape[axis]

    def sl(lo, hi):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(lo, hi)
        return a[tuple(idx)]

    if m == 0:
        return sl(1, n - 1)
    if m == 1:
        return (sl(2, n) - sl(0, n - 2)) / (2 * h)
    if m == 2:
        return (sl(2, n) - 2 * sl(1, n - 1) + sl(0, n - 2)) / (h * h)
    raise UsageError("only derivatives up to order 2 per axis are supported")


def fd_apply(op: DiffOp, u: Field3) -> tuple[np.ndarray, Grid3]:
    """Apply ``op`` with centred stencils; returns values on the interior grid."""
    if op.variables != AXES:
        raise UsageError(f"operator variables must be {AXES}")
    g = u.grid
    axes = [g.axis(i) for i in range(3)]
    inner = [a[1:-1] for a in axes]
    X, T, S = np.meshgrid(*inner, indexing="ij")
    out = np.zeros(X.shape, dtype=complex)
    for alpha, coef in op.terms.items():
        d = u.values
        for i, m in enumerate(alpha):
            d = _stencil(d, i, m, g.spacing(i))
        cvals = np.zeros(X.shape, dtype=complex)
        for e, c in coef.terms.items():
            cvals = cvals + c * X ** e[0] * T ** e[1] * S ** e[2]
        out += cvals * d
    ig = Grid3(tuple((a[0], a[-1]) for a in inner), tuple(len(a) for a in inner))
    return out, ig


def _restrict(values: np.ndarray, grid: Grid3, box: Box3) -> np.ndarray:
    idx = []
    for i, (lo, hi) in enumerate(box.bounds):
        a = grid.axis(i)
        if a[0] > lo + _BOX_EPS or a[-1] < hi - _BOX_EPS:
            raise UsageError("box is not inside the grid")
        idx.append(np.nonzero((a >= lo - _BOX_EPS) & (a <= hi + _BOX_EPS))[0])
    return values[np.ix_(*idx)]


def check_resolution(grid: Grid3, tau: float, min_points: int = MIN_POINTS_PER_PERIOD):
    ht = grid.spacing(1)
    if grid.counts[1] > 1 and (2 * math.pi / tau) / ht < min_points:
        raise UsageError(
            f"t spacing {ht:.3g} gives fewer than {min_points} points per period 2*pi/tau"
        )


@dataclass(frozen=True)
class ResidualStudy:
    residuals: list[float]
    spacings: list[tuple[float, float, float]]
    orders: list[float]

    def to_dict(self):
        return {"residuals": self.residuals, "spacings": [list(h) for h in self.spacings],
                "orders": self.orders}


def apply_L_fd(op: DiffOp, fields: Sequence[Field3], box: Box3) -> ResidualStudy:
    """Sup norm over ``box`` of ``op u`` for successively refined samplings of u.

    Orders are ``log2`` of consecutive residual ratios (one per refinement).
    Each grid must extend at least one node beyond ``box`` on every side.
    """
    res, hs = [], []
    for u in fields:
        tau = u.provenance.get("tau")
        if tau:
            check_resolution(u.grid, tau)
        vals, ig = fd_apply(op, u)
        res.append(float(np.max(np.abs(_restrict(vals, ig, box)))))
        hs.append(tuple(u.grid.spacing(i) for i in range(3)))
    orders = [math.log2(a / b) if b > 0 and a > 0 else math.inf for a, b in zip(res, res[1:])]
    return ResidualStudy(res, hs, orders)


def default_operator(k: int) -> DiffOp:
    return sum_of_squares(counterexample_fields(k))


def pde_residual_study(k: int, tau: float, levels: int = 3, box: Box3 | None = None,
                       base_spacing=None, sigma_scale: float = 1.0,
                       sol: SeparatedSolution | None = None) -> ResidualStudy:
    """FD residual of the sum-of-squares operator on ``u_tau`` under h-halving.

    ``sigma_scale`` multiplies the growth rate; values other than 1 give a
    function that is not annihilated, used as a negative control.
    """
    box = box or PDE_BOX
    if base_spacing is None:
        # at least 20 points per period 2 pi / tau, as a power of two
        ht = min(1 / 64, 2.0 ** -math.ceil(math.log2(20 * tau / (2 * math.pi))))
        base_spacing = (1 / 32, ht, 1 / 8)
    sol = sol or separated_solution(k, tau)
    if sigma_scale != 1.0:
        sol = SeparatedSolution(sol.k, sol.tau, sol.lam, sol.sigma * sigma_scale, sol.coeffs)
    op = default_operator(k)
    fields = []
    for lev in range(levels):
        h = [b / 2**lev for b in base_spacing]
        grid = Grid3.covering(box, h, margin=1)
        fields.append(sample_field(sol, grid, sol.provenance()))
    return apply_L_fd(op, fields, box)


def sup_norms(u: Field3, box: Box3, with_dt: bool = True):
    """``(sup |u|, sup |d_t u|)`` over grid points in ``box``; ``d_t u = i tau u`` exactly."""
    sup_u = float(np.max(np.abs(_restrict(u.values, u.grid, box))))
    if not with_dt:
        return sup_u, None
    return sup_u, float(u.provenance["tau"]) * sup_u


def sup_grid_for(tau: float, Vprime: Box3, s_spacing: float = 0.05) -> Grid3:
    """Grid over V' resolving the x-scale ``tau^{-1/2}``; |u| does not depend on t."""
    hx = 0.5 / math.sqrt(tau)
    t_span = Vprime.bounds[1][1] - Vprime.bounds[1][0]
    return Grid3.covering(Vprime, (hx, t_span / 2, s_spacing))


@dataclass(frozen=True)
class CounterexampleRow:
    tau: float
    sup_u_Vprime: float
    sup_dtu_V: float
    ratio: float
    fd_residual: float | None = None
    h_used: float | None = None
    sigma: float | None = None
    lam: float | None = None

    def to_dict(self):
        d = dict(self.__dict__)
        d["lambda"] = d.pop("lam")
        return d


CSV_HEADER = ("tau", "sup_u_Vprime", "sup_dtu_V", "ratio", "fd_residual", "h_used")


@dataclass(frozen=True)
class CounterexampleReport:
    k: int
    V: Box3
    Vprime: Box3
    rows: list[CounterexampleRow]
    growth_fit: PowerLawFit
    configuration: str = "degenerate"
    notes: tuple[str, ...] = ()

    @property
    def falsifies(self) -> bool:
        return self.growth_fit.slope >= FALSIFY_SLOPE

    @property
    def status(self) -> str:
        return "falsifying" if self.falsifies else "not falsifying"

    def to_dict(self):
        return {
            "k": self.k,
            "configuration": self.configuration,
            "V": self.V.to_list(),
            "Vprime": self.Vprime.to_list(),
            "rows": [r.to_dict() for r in self.rows],
            "growth_fit": self.growth_fit.to_dict(),
            "falsifying_slope_threshold": FALSIFY_SLOPE,
            "status": self.status,
            "notes": list(self.notes),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            d = r.to_dict()
            w.writerow(["" if d[h] is None else repr(float(d[h])) for h in CSV_HEADER])
        return buf.getvalue()


NOTES = (
    "L u_tau vanishes identically, so the constant M of the hypothetical estimate plays no role.",
    "R(tau) = sup_V |d_t u| / sup_V' |u| is a lower bound for the constant C with N = 1.",
    "FD residuals grow with tau^2 times rounding and truncation error at fixed h; they are "
    "computed only for tau <= 64.",
)


def _row(k, tau, V, Vprime, fields, check_pde):
    sol = separated_solution(k, tau, fields)
    u = build_u(k, tau, sup_grid_for(tau, Vprime), sol)
    sup_up, _ = sup_norms(u, Vprime, with_dt=False)
    _, sup_dt = sup_norms(u, V)
    fd_res = h_used = None
    if check_pde and fields is None and tau <= 64:
        study = pde_residual_study(k, tau, levels=1, sol=sol,
                                   base_spacing=(1 / 64, min(1 / 64, 2 * math.pi / tau / 20), 1 / 16))
        fd_res, h_used = study.residuals[-1], study.spacings[-1][0]
    return CounterexampleRow(tau, sup_up, sup_dt, sup_dt / sup_up, fd_res, h_used, sol.sigma, sol.lam)


def falsify_baire(k: int, tau_list: Sequence[float], V: Box3 | None = None,
                  Vprime: Box3 | None = None, fields=None, check_pde: bool = False,
                  threads: int = 1) -> CounterexampleReport:
    """Growth of ``R(tau)`` along the family; slope >= 0.95 counts as falsification.

    ``fields`` replaces the default vector fields (e.g. a non-degenerate
    comparison configuration).
    """
    V = V or Box3.cube(0.5)
    Vprime = Vprime or Box3.cube(1.0)
    check_nested(V, Vprime)
    taus = [float(t) for t in tau_list]
    if len(taus) < 3:
        raise UsageError("need at least 3 tau values to fit growth")
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise UsageError("tau_list must be strictly increasing")
    work = lambda t: _row(k, t, V, Vprime, fields, check_pde)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(work, taus))
    else:
        rows = [work(t) for t in taus]
    fit = fit_power_law((r.tau, r.ratio) for r in rows)
    config = "degenerate" if fields is None else "comparison"
    return CounterexampleReport(k, V, Vprime, rows, fit, config, NOTES)


def comparison_fields(variables=AXES):
    """``(Lbar, L, d/ds)``: the degenerate factor x^k removed."""
    Lbar, L = lbar_and_l(variables)
    _, _, Z3 = counterexample_fields(1, variables)
    return Lbar, L, Z3


def dump_field(u: Field3, path) -> tuple[Path, Path]:
    """Write samples as little-endian float64 (re, im) pairs in C order plus a JSON sidecar."""
    path = Path(path)
    data = np.empty(u.values.shape + (2,), dtype="<f8")
    data[..., 0] = u.values.real
    data[..., 1] = u.values.imag
    path.write_bytes(data.tobytes(order="C"))
    meta = {
        **u.grid.to_dict(),
        "dtype": "float64",
        "byte_order": "little",
        "layout": "complex-interleaved, C order over (x, t, s)",
        "provenance": u.provenance,
    }
    side = path.with_suffix(path.suffix + ".json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path, side


def load_field(path) -> Field3:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    shape = tuple(meta["shape"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(shape + (2,))
    grid = Grid3(tuple(tuple(b) for b in meta["bounds"]), shape)
    return Field3(grid, raw[..., 0] + 1j * raw[..., 1], meta.get("provenance", {}))
