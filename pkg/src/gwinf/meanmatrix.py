"""Truncated mean matrix, its Perron eigenvectors and class-membership checks."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from functools import reduce
from typing import Any

import numpy as np
from scipy.sparse.csgraph import connected_components

from .model import (
    BranchingModel,
    Family,
    ModelSpec,
    TailPolicy,
    build_model,
    child_count_pmf,
    slack_pmf,
    truncated_first_moment,
)

CRITICAL_BAND = 1e-6
POSITIVITY_FLOOR = 1e-12


class NumericError(RuntimeError):
    pass


class IrreducibilityError(NumericError):
    pass


class ConvergenceError(NumericError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (last residual {residual:.3e})")
        self.residual = residual


class Criticality(str, enum.Enum):
    SUB = "SUB"
    CRITICAL = "CRITICAL"
    SUPER = "SUPER"


@dataclass(frozen=True)
class TruncatedMeanMatrix:
    entries: np.ndarray
    tail_bound: float = 0.0
    policy: TailPolicy = TailPolicy.DISCARD

    @property
    def N(self) -> int:
        return self.entries.shape[0]

    @property
    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    @property
    def W(self) -> float:
        return float(self.row_sums.max())

    def scaled(self, gamma: float) -> "TruncatedMeanMatrix":
        return TruncatedMeanMatrix(gamma * self.entries, gamma * self.tail_bound, self.policy)

    def permuted(self, perm) -> "TruncatedMeanMatrix":
        perm = np.asarray(perm)
        return TruncatedMeanMatrix(self.entries[np.ix_(perm, perm)], self.tail_bound, self.policy)


def build_truncated(spec: ModelSpec | BranchingModel) -> TruncatedMeanMatrix:
    """Mean matrix on types 1..N with the tail handled per the model's policy.

    ``tail_bound`` is the untruncated ``sup_i sum_{j > N} M_ij``, i.e. the
    mass the policy dropped or relabelled.
    """
    model = spec if isinstance(spec, BranchingModel) else build_model(spec)
    entries = np.array(model.mean, dtype=float)
    return TruncatedMeanMatrix(entries, float(np.max(model.escaped, initial=0.0)), model.policy)


@dataclass
class EigenSystem:
    v: np.ndarray
    u: np.ndarray
    rho: float
    residual_left: float
    residual_right: float
    iterations: int

    @property
    def U(self) -> float:
        return float(self.u.max())


def _as_array(M) -> np.ndarray:
    return M.entries if isinstance(M, TruncatedMeanMatrix) else np.asarray(M, dtype=float)


def is_irreducible(M) -> bool:
    A = _as_array(M)
    if A.shape[0] == 1:
        return bool(A[0, 0] > 0)
    n, _ = connected_components(A > 0, directed=True, connection="strong")
    return n == 1


def period(M, index: int = 0) -> int:
    """gcd of closed-walk lengths through ``index``, walks up to length 2N."""
    A = (_as_array(M) > 0).astype(float)
    N = A.shape[0]
    x = np.zeros(N)
    x[index] = 1.0
    lengths = []
    for k in range(1, 2 * N + 1):
        x = ((x @ A) > 0).astype(float)
        if x[index]:
            lengths.append(k)
    return reduce(math.gcd, lengths, 0)


def eigen_pair(M, tol: float = 1e-13, max_iter: int = 200_000) -> EigenSystem:
    """Left/right Perron vectors by power iteration.

    Scaled so that ``sum(v) = 1`` and ``v . u = 1``.
    """
    A = _as_array(M)
    N = A.shape[0]
    if np.any(A.sum(axis=1) == 0) or np.any(A.sum(axis=0) == 0):
        raise IrreducibilityError("mean matrix has a zero row or column")
    if not is_irreducible(A):
        raise IrreducibilityError("mean matrix is reducible on its truncation")
    At = np.ascontiguousarray(A.T)

    v = np.full(N, 1.0 / N)
    u = np.ones(N)
    res_l = res_r = np.inf
    for it in range(1, max_iter + 1):
        if res_l > tol:
            w = At @ v
            rho_l = w.sum()
            res_l = np.max(np.abs(w - rho_l * v)) / rho_l
            v = w / rho_l
        if res_r > tol:
            y = A @ u
            rho_r = y.max()
            res_r = np.max(np.abs(y - rho_r * u)) / rho_r
            u = y / rho_r
        if res_l <= tol and res_r <= tol:
            break
    else:
        raise ConvergenceError("power iteration did not converge", max(res_l, res_r))

    v = v / math.fsum(v)
    u = u / math.fsum(v * u)
    vA = At @ v
    rho = math.fsum(vA)
    return EigenSystem(
        v=v,
        u=u,
        rho=rho,
        residual_left=float(np.max(np.abs(vA - rho * v))),
        residual_right=float(np.max(np.abs(A @ u - rho * u))),
        iterations=it,
    )


@dataclass
class RadiusEstimate:
    n: np.ndarray
    r: np.ndarray
    R: float
    width: float


def convergence_radius(M, i: int = 1, j: int = 1, n_max: int = 500) -> RadiusEstimate:
    """``r_n = (M_ij^(n))^(-1/n)`` and its extrapolated limit ``R``.

    Indices are 1-based. Powers are accumulated in the log domain. With
    ``log M^(n) ~ -n log R + log c``, the two-point elimination between
    ``n_max/2`` and ``n_max`` removes the ``1/n`` term; the reported width is
    ``|log c| / n_max``.
    """
    A = _as_array(M)
    x = np.zeros(A.shape[0])
    x[i - 1] = 1.0
    At = np.ascontiguousarray(A.T)
    logscale = 0.0
    logm = np.full(n_max, -np.inf)
    for n in range(1, n_max + 1):
        x = At @ x
        s = x.max()
        if s <= 0:
            break
        x /= s
        logscale += math.log(s)
        if x[j - 1] > 0:
            logm[n - 1] = logscale + math.log(x[j - 1])
    ns = np.arange(1, n_max + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        r = np.exp(-logm / ns)
    finite = np.flatnonzero(np.isfinite(logm))
    if finite.size == 0:
        return RadiusEstimate(ns, r, math.inf, math.inf)
    hi = finite[-1]
    lo_candidates = finite[finite <= hi // 2]
    lo = lo_candidates[-1] if lo_candidates.size else finite[0]
    if hi == lo:
        logR = -logm[hi] / ns[hi]
    else:
        logR = -(logm[hi] - logm[lo]) / (ns[hi] - ns[lo])
    logc = logm[hi] + ns[hi] * logR
    return RadiusEstimate(ns, r, float(math.exp(logR)), abs(logc) / n_max)


@dataclass
class Classification:
    criticality: Criticality
    positive: bool
    status: str
    max_rel_dev: float
    rho: float


def classify(M, es: EigenSystem, n: int = 200, band: float = CRITICAL_BAND,
             residual_tol: float = 1e-8) -> Classification:
    """Criticality from the Perron root, plus the R-positivity proxy.

    The proxy compares ``M^(n) R^n`` with ``u v`` at a finite ``n``; actual
    R-positivity of an infinite matrix cannot be decided from a truncation.
    """
    A = _as_array(M)
    rho = es.rho
    if abs(rho - 1.0) <= band:
        crit = Criticality.CRITICAL
    elif rho < 1.0:
        crit = Criticality.SUB
    else:
        crit = Criticality.SUPER
    status = "ok"
    if max(es.residual_left, es.residual_right) > residual_tol:
        status = "inconclusive"
    P = np.linalg.matrix_power(A / rho, n)
    target = np.outer(es.u, es.v)
    ratio = P / target
    dev = float(np.max(np.abs(ratio - 1.0)))
    positive = bool(np.min(ratio) > POSITIVITY_FLOOR)
    return Classification(crit, positive, status, dev, rho)


@dataclass
class RowBound:
    constant: float
    sequence: np.ndarray
    nonincreasing: bool


def uniform_row_bound(M, es: EigenSystem, n_max: int = 200) -> RowBound:
    """``max_i M_i^(n) / u_i`` for n = 0..n_max and its overall maximum."""
    A = _as_array(M)
    r = np.ones(A.shape[0])
    seq = [float(np.max(r / es.u))]
    for _ in range(n_max):
        r = A @ r
        seq.append(float(np.max(r / es.u)))
    seq = np.asarray(seq)
    burn = max(1, n_max // 10)
    tail = seq[burn:]
    noninc = bool(np.all(np.diff(tail) <= 1e-12 * np.maximum(tail[:-1], 1.0)))
    return RowBound(float(seq.max()), seq, noninc)


def _decays(values) -> bool:
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        return True
    noninc = np.all(np.diff(vals) <= 1e-12)
    return bool(noninc and (vals[-1] <= 1e-12 or vals[-1] <= 0.01 * vals[0]))


def _pow2_grid(top: int) -> list[int]:
    grid = [1]
    while grid[-1] * 2 <= top:
        grid.append(grid[-1] * 2)
    if grid[-1] != top:
        grid.append(top)
    return grid


@dataclass
class ClassReport:
    irreducible: bool
    aperiodic: bool
    R_estimate: float | None = None
    R_width: float | None = None
    criticality: Criticality | None = None
    positivity: bool = False
    positivity_note: str = "proxy: M^(n) R^n compared with u v at finite n"
    recurrence_partial_sums: list[tuple[int, float]] = field(default_factory=list)
    v_l1: float | None = None
    U: float | None = None
    cond_iii_tail: list[tuple[int, float]] = field(default_factory=list)
    cond_iii_trunc: list[tuple[int, float]] = field(default_factory=list)
    C_iv: float | None = None
    m_iv: int | None = None
    c_iv: float | None = None
    row_bound_C: float | None = None
    frak_m: float | None = None
    flags: dict[str, bool] = field(default_factory=dict)

    @property
    def in_M1(self) -> bool:
        return self.flags.get("M1", False)

    @property
    def in_M1_0(self) -> bool:
        return self.flags.get("M1_0", False)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["criticality"] = None if self.criticality is None else self.criticality.value
        return d


def _trunc_moment_table(model: BranchingModel, grid: list[int]) -> list[tuple[int, float]]:
    """``sup_i M_i^{-1} E[Z_i; Z_i > K]`` over the untruncated laws."""
    sums = model.untruncated_row_sums()
    worst = np.zeros(len(grid))
    if model.family is Family.SLACK_KERNEL:
        by_c: dict[float, np.ndarray] = {}
        for c in np.unique(model.c):
            pmf = slack_pmf(float(model.alpha), float(c), max(grid))
            by_c[float(c)] = np.array([truncated_first_moment(pmf, K) for K in grid])
        for i in range(model.N):
            worst = np.maximum(worst, by_c[float(model.c[i])] / sums[i])
    elif model.family is Family.TABULATED:
        for i in range(model.N):
            pmf = child_count_pmf(model.spec, i + 1, max(grid))
            k = np.arange(len(pmf.p))
            vals = [math.fsum(k[K + 1:] * pmf.p[K + 1:]) for K in grid]
            if pmf.tail > 0:
                worst[:] = np.inf
            worst = np.maximum(worst, np.asarray(vals) / max(sums[i], 1e-300))
    return list(zip(grid, map(float, worst)))


def check_class_m1(spec: ModelSpec | BranchingModel, M: TruncatedMeanMatrix | None = None,
                   es: EigenSystem | None = None, *, n_max: int = 500, m_max: int = 50,
                   k_top: int = 2**16) -> ClassReport:
    """Fill every class-membership diagnostic; never raises on a failed condition."""
    model = spec if isinstance(spec, BranchingModel) else build_model(spec)
    if M is None:
        M = build_truncated(model)
    A = M.entries
    N = M.N
    irreducible = is_irreducible(A)
    aperiodic = irreducible and period(A) == 1
    rep = ClassReport(irreducible=irreducible, aperiodic=aperiodic)

    sums = model.untruncated_row_sums()
    with np.errstate(divide="ignore", invalid="ignore"):
        rep.cond_iii_tail = [
            (N0, float(np.max(np.where(sums > 0, model.kernel_tail(N0) / sums, 1.0))))
            for N0 in _pow2_grid(N)
        ]
    rep.cond_iii_trunc = _trunc_moment_table(model, _pow2_grid(k_top))
    cond_iii = _decays([t for _, t in rep.cond_iii_tail]) and _decays([t for _, t in rep.cond_iii_trunc])

    if es is None and irreducible:
        try:
            es = eigen_pair(M)
        except NumericError:
            es = None
    if es is None:
        rep.flags = {"cond_i": False, "cond_ii": False, "cond_iii": cond_iii,
                     "cond_iv": False, "M1": False, "M1_0": False}
        return rep

    cls = classify(A, es, n=min(n_max, 300))
    rad = convergence_radius(A, 1, 1, n_max)
    rep.R_estimate, rep.R_width = rad.R, rad.width
    rep.criticality = cls.criticality
    rep.positivity = cls.positive
    rep.recurrence_partial_sums = _partial_sums(A, es.rho, n_max)
    rep.v_l1 = math.fsum(es.v)
    rep.U = es.U

    with np.errstate(divide="ignore"):
        rep.C_iv = float(np.max(A / np.outer(es.u, es.v)))
    x = np.zeros(N)
    x[0] = 1.0
    for m in range(1, m_max + 1):
        x = x @ A
        ratio = float(np.min(x / es.v))
        if ratio > POSITIVITY_FLOOR:
            rep.m_iv, rep.c_iv = m, ratio
            break
    rb = uniform_row_bound(A, es, n_max=min(n_max, 200))
    rep.row_bound_C = rb.constant
    rep.frak_m = rep.C_iv * rep.U

    cond_i = irreducible and aperiodic and cls.positive
    cond_ii = abs(rep.v_l1 - 1.0) <= 1e-12 and np.isfinite(rep.U)
    cond_iv = bool(np.isfinite(rep.C_iv) and rep.m_iv is not None)
    critical = cls.criticality is Criticality.CRITICAL
    m1 = bool(critical and cond_i and cond_ii and cond_iii)
    rep.flags = {
        "critical": critical,
        "cond_i": bool(cond_i),
        "cond_ii": bool(cond_ii),
        "cond_iii": bool(cond_iii),
        "cond_iv": cond_iv,
        "M1": m1,
        "M1_0": bool(m1 and cond_iv),
    }
    return rep


def _partial_sums(A: np.ndarray, rho: float, n_max: int) -> list[tuple[int, float]]:
    """Partial sums of ``sum_n m_11^(n) R^n``; reported, never turned into a verdict."""
    x = np.zeros(A.shape[0])
    x[0] = 1.0
    total = 1.0
    out = []
    checkpoints = set(_pow2_grid(n_max))
    B = A / rho
    for n in range(1, n_max + 1):
        x = x @ B
        total += x[0]
        if n in checkpoints:
            out.append((n, float(total)))
    return out
