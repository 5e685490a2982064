"""Exact iteration of the offspring generating functions on the truncation.

All quantities live in the complement ``Q(n; s) = 1 - F(n; s)``. One step is
``Q(n+1) = 1 - F(1 - Q(n))``, the right-composition form of
``F(n+1; s) = F(F(n; s))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .meanmatrix import EigenSystem, NumericError
from .model import BranchingModel

S_INTERIOR = 1e-12


class IterationError(NumericError):
    def __init__(self, generation: int, msg: str = "non-finite generating function value"):
        super().__init__(f"{msg} at generation {generation}")
        self.generation = generation


def _dot(v: np.ndarray, x: np.ndarray) -> float:
    return math.fsum(v * x)


def linear_deficit(model: BranchingModel, es: EigenSystem) -> float:
    """``1 - rho`` as ``v (1 - M 1) / (v 1)``.

    Exact for a left eigenvector and free of the rounding in ``rho`` itself,
    which would otherwise dominate ``Phi(x)`` below ``x ~ 1e-6``.
    """
    return _dot(es.v, model.row_deficit) / math.fsum(es.v)


def phi_of_x(model: BranchingModel, es: EigenSystem, x: float) -> float:
    """``Phi(x) = x - v Q(1 - x u)`` for ``x U <= 1``, ``x - v Q(0)`` beyond.

    On the first branch the linear part of ``Q`` is cancelled analytically
    (``v M u = rho``), leaving ``x (1 - rho) + v N(x u)`` with ``N`` the
    nonlinear remainder; evaluating the difference directly would lose all
    digits for small ``x``. ``es`` must be the eigen system of ``model.mean``.
    """
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 0.0
    if x * es.U <= 1.0:
        return x * linear_deficit(model, es) + _dot(es.v, model.nonlinear_part(x * es.u))
    return x - _dot(es.v, model.complement(np.ones(model.N)))


@dataclass
class PhiCurve:
    x: np.ndarray
    phi: np.ndarray
    U: float
    func: object = None  # exact evaluator x -> Phi(x), when available

    def __call__(self, x: float) -> float:
        if self.func is not None:
            return self.func(x)
        return float(np.exp(np.interp(np.log(x), np.log(self.x), np.log(self.phi))))


def phi_curve(model: BranchingModel, es: EigenSystem, n_points: int = 40, x_min: float = 1e-8) -> PhiCurve:
    """Phi sampled on log-spaced points in ``[x_min, min(1, 1/U)]``."""
    x_max = min(1.0, 1.0 / es.U)
    xs = np.logspace(np.log10(x_min), np.log10(x_max), n_points)
    xs[-1] = x_max
    phi = np.array([phi_of_x(model, es, x) for x in xs])
    return PhiCurve(xs, phi, es.U, func=lambda x: phi_of_x(model, es, x))


@dataclass
class IterationTrace:
    """Per-generation record; arrays are indexed by n = 0..n_max.

    ``B[n] = q(n) - q(n+1)`` has no value at ``n_max`` (NaN there).
    ``Q_vectors`` holds the full ``Q(n; s)`` for the generations kept.
    """

    n: np.ndarray
    q: np.ndarray
    sup_Q: np.ndarray
    ratio_sup: np.ndarray
    B: np.ndarray
    phi_q: np.ndarray
    Q_final: np.ndarray
    Q_vectors: dict[int, np.ndarray] = field(default_factory=dict)
    first_extinction: np.ndarray | None = None

    @property
    def n_max(self) -> int:
        return int(self.n[-1])

    def rows(self):
        for k in range(len(self.n)):
            yield (int(self.n[k]), self.q[k], self.sup_Q[k], self.ratio_sup[k], self.B[k], self.phi_q[k])


def _as_keep(keep, n_max: int) -> set[int]:
    if keep is None:
        return set()
    if keep == "all":
        return set(range(n_max + 1))
    return {int(k) for k in keep}


def iterate_complement(model: BranchingModel, Q0: np.ndarray, n_max: int, es: EigenSystem, *,
                       keep=None, with_phi: bool = True) -> IterationTrace:
    """Iterate from an initial complement ``Q(0; s) = 1 - s``."""
    Q = np.array(Q0, dtype=float)
    if Q.shape != (model.N,):
        raise ValueError(f"initial vector has shape {Q.shape}, expected ({model.N},)")
    if np.any(Q < 0) or np.any(Q > 1):
        raise ValueError("s must lie in [0, 1]^N")
    if Q.max() < S_INTERIOR:
        raise ValueError("s must differ from 1 in some component by at least 1e-12")
    keep = _as_keep(keep, n_max)
    v, u = es.v, es.u
    q = np.empty(n_max + 1)
    supQ = np.empty(n_max + 1)
    ratio = np.full(n_max + 1, np.nan)
    B = np.full(n_max + 1, np.nan)
    phi_q = np.full(n_max + 1, np.nan)
    first_ext = np.full(model.N, -1, dtype=np.int64)
    kept = {}
    one_minus_rho = linear_deficit(model, es)

    for n in range(n_max + 1):
        qn = _dot(v, Q)
        q[n] = qn
        supQ[n] = Q.max()
        newly = (first_ext < 0) & (Q < 1.0)
        first_ext[newly] = n
        if qn > 0:
            ratio[n] = float(np.max(np.abs(Q / (u * qn) - 1.0)))
            if with_phi:
                phi_q[n] = phi_of_x(model, es, qn)
        if n in keep:
            kept[n] = Q.copy()
        if n == n_max:
            break
        Q_next, nl = model.step(Q)
        # B(n) = v Q(n) - v (M Q(n) - N(Q(n))) = (1 - rho) q(n) + v N(Q(n))
        B[n] = one_minus_rho * qn + _dot(v, nl)
        Q = Q_next
        if not np.all(np.isfinite(Q)):
            raise IterationError(n + 1)
        np.clip(Q, 0.0, 1.0, out=Q)

    return IterationTrace(
        n=np.arange(n_max + 1),
        q=q,
        sup_Q=supQ,
        ratio_sup=ratio,
        B=B,
        phi_q=phi_q,
        Q_final=Q,
        Q_vectors=kept,
        first_extinction=first_ext,
    )


def iterate_generating(model: BranchingModel, s0, n_max: int, es: EigenSystem, **kw) -> IterationTrace:
    """Apply ``s <- F(s)`` ``n_max`` times starting from ``s0``."""
    s0 = np.asarray(s0, dtype=float)
    return iterate_complement(model, 1.0 - s0, n_max, es, **kw)


def survival_curve(model: BranchingModel, n_max: int, es: EigenSystem, keep="auto", **kw) -> IterationTrace:
    """The ``s = 0`` trace: ``Q_i(n) = P(Z(n) != 0 | Z(0) = e_i)``.

    ``keep="auto"`` stores every ``Q(n)`` vector while that stays below five
    million numbers, otherwise none. ``1 - Q_vectors[n]`` gives the
    extinction probabilities ``F_i(n; 0)``.
    """
    if keep == "auto":
        keep = "all" if (n_max + 1) * model.N <= 5_000_000 else None
    return iterate_complement(model, np.ones(model.N), n_max, es, keep=keep, **kw)


def yaglom_point(lam, q_n: float) -> tuple[np.ndarray, np.ndarray]:
    """``s_i = exp(-lambda_i q(n))`` and its exact complement ``1 - s_i``."""
    lam = np.asarray(lam, dtype=float)
    return np.exp(-lam * q_n), -np.expm1(-lam * q_n)


@dataclass
class RatioDiagnostic:
    ratio_sup: np.ndarray
    envelope: np.ndarray
    n0: int | None
    threshold: float
    ended_at: int | None = None


def ratio_diagnostic(trace: IterationTrace, es: EigenSystem | None = None, threshold: float = 0.01) -> RatioDiagnostic:
    """Monotone envelope of ``sup_i |Q_i / (u_i q) - 1|`` and its entry time.

    ``envelope[n]`` is the largest ratio from ``n`` onward, so ``n0`` is the
    first generation after which the ratio never exceeds ``threshold``.
    """
    r = trace.ratio_sup
    dead = np.flatnonzero(~(trace.q > 0))
    ended = int(dead[0]) if dead.size else None
    if ended is not None:
        r = r[:ended]
    env = np.maximum.accumulate(r[::-1])[::-1] if r.size else r
    ok = np.flatnonzero(env <= threshold)
    return RatioDiagnostic(r, env, int(ok[0]) if ok.size else None, threshold, ended)


@dataclass
class BDiagnostic:
    b_over_phi: np.ndarray
    phi_ratio: np.ndarray


def b_diagnostic(trace: IterationTrace) -> BDiagnostic:
    """``B(n)/Phi(q(n))`` and ``Phi(q(n+1))/Phi(q(n))``; NaN where Phi vanishes."""
    phi = trace.phi_q
    with np.errstate(divide="ignore", invalid="ignore"):
        good = phi > 0
        bphi = np.where(good, trace.B / np.where(good, phi, 1.0), np.nan)[:-1]
        ratio = np.where(good[:-1], phi[1:] / np.where(good[:-1], phi[:-1], 1.0), np.nan)
    return BDiagnostic(bphi, ratio)
