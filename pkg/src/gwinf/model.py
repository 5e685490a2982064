"""Offspring-law families on a countable, truncated type space.

Types are 1-based in specs, JSON and messages, and 0-based inside arrays.

Three families are built in:

* ``SLACK_KERNEL``: a type-``i`` parent has ``K`` children with pgf
  ``psi_i(x) = x + c_i (1 - x)^(1 + alpha)`` and each child independently
  gets a type drawn from kernel row ``pi^(i)``, so
  ``F_i(s) = psi_i(pi^(i) . s)``.
* ``LINEAR``: exactly one child, typed by the kernel (``F(s) = M s``).
* ``TABULATED``: explicit finite-support offspring vectors per type.

Everything numerically delicate is done in the complement variable
``Q = 1 - s``: survival probabilities shrink to ~1e-9, and ``1 - s`` would
discard them.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy import sparse
from scipy.special import gammaln

#: Child-count table length before falling back to the closed-form tail.
DEFAULT_K_MAX = 2**16
ROW_SUM_TOL = 1e-12


class Family(str, enum.Enum):
    SLACK_KERNEL = "SLACK_KERNEL"
    TABULATED = "TABULATED"
    LINEAR = "LINEAR"


class TailPolicy(str, enum.Enum):
    """What happens to children whose type lies beyond the truncation."""

    DISCARD = "DISCARD"
    PROJECT_LAST = "PROJECT_LAST"

    @classmethod
    def parse(cls, value: str | "TailPolicy") -> "TailPolicy":
        if isinstance(value, cls):
            return value
        key = str(value).upper()
        if key in ("PROJECT", "PROJECT_LAST"):
            return cls.PROJECT_LAST
        return cls(key)


class SpecError(ValueError):
    """Raised when a model spec cannot be built; carries the violation list."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Complete description of an offspring family plus truncation policy.

    ``kernel`` is a descriptor dict, one of::

        {"type": "geometric", "rho": [...]}   # pi_ij = rho_i (1 - rho_i)^(j-1)
        {"type": "explicit", "rows": [[...], ...], "tail": [...]}
        {"type": "shift"}                      # pi^(i) = e_(i+1)

    ``rho`` and ``slack_coeffs`` are cycled when shorter than
    ``truncation_N``. For explicit rows, ``tail[i]`` is the mass that row
    ``i`` puts on types beyond the listed columns.
    """

    family: Family
    truncation_N: int
    alpha: float | None = None
    slack_coeffs: tuple[float, ...] = ()
    kernel: dict[str, Any] | None = None
    tail_policy: TailPolicy = TailPolicy.DISCARD
    tabulated_rows: tuple | None = None
    name: str = ""

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelSpec":
        rows = d.get("tabulated_rows")
        return cls(
            family=Family(str(d["family"]).upper()),
            truncation_N=int(d["truncation_N"]),
            alpha=None if d.get("alpha") is None else float(d["alpha"]),
            slack_coeffs=tuple(float(c) for c in d.get("slack_coeffs", ())),
            kernel=d.get("kernel"),
            tail_policy=TailPolicy.parse(d.get("tail_policy", "DISCARD")),
            tabulated_rows=None if rows is None else tuple(tuple(r) for r in rows),
            name=d.get("name", ""),
        )

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "name": self.name,
            "family": self.family.value,
            "alpha": self.alpha,
            "truncation_N": self.truncation_N,
            "tail_policy": self.tail_policy.value,
            "slack_coeffs": list(self.slack_coeffs),
            "kernel": self.kernel,
        }
        if self.tabulated_rows is not None:
            d["tabulated_rows"] = [list(r) for r in self.tabulated_rows]
        return d

    def replace(self, **changes) -> "ModelSpec":
        from dataclasses import replace

        if "tail_policy" in changes:
            changes["tail_policy"] = TailPolicy.parse(changes["tail_policy"])
        return replace(self, **changes)

    def coeffs(self) -> np.ndarray:
        """Slack coefficients ``c_1..c_N``, cycled."""
        if self.family is Family.LINEAR:
            return np.zeros(self.truncation_N)
        if not self.slack_coeffs:
            return np.zeros(0)
        return _cycle(self.slack_coeffs, self.truncation_N)


def _cycle(values: Sequence[float], n: int) -> np.ndarray:
    vals = np.asarray(values, dtype=float)
    return np.resize(vals, n)


BUNDLED_DIR = Path(__file__).parent / "models"


def load_spec(path: str | Path) -> ModelSpec:
    """Read a spec from a JSON file; bare names resolve to bundled models."""
    p = Path(path)
    if not p.exists():
        bundled = BUNDLED_DIR / p.name
        if not bundled.exists() and not p.suffix:
            bundled = BUNDLED_DIR / (p.name + ".json")
        if bundled.exists():
            p = bundled
    with open(p) as fh:
        return ModelSpec.from_dict(json.load(fh))


def bundled_models() -> list[str]:
    return sorted(f.name for f in BUNDLED_DIR.glob("*.json"))


# ----------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    linear: bool = False

    @property
    def valid(self) -> bool:
        return not self.violations

    @property
    def rejected_for_asymptotics(self) -> bool:
        """Valid but ``F(s) = M s``: excluded by every limit theorem here."""
        return self.valid and self.linear

    def to_dict(self) -> dict[str, Any]:
        notes = []
        if self.linear:
            notes.append("F = Ms (linear generating functions), excluded by theorem hypothesis")
        return {
            "valid": self.valid,
            "violations": list(self.violations),
            "linear": self.linear,
            "rejected_for_asymptotics": self.rejected_for_asymptotics,
            "notes": notes,
        }


def validate_spec(spec: ModelSpec) -> ValidationReport:
    """Collect every violated invariant of ``spec``; never raises."""
    rep = ValidationReport()
    v = rep.violations
    N = spec.truncation_N
    if N < 1:
        v.append(f"truncation_N={N} must be a positive integer")
        return rep

    if spec.family is Family.SLACK_KERNEL:
        a = spec.alpha
        if a is None or not (0.0 < a <= 1.0):
            v.append(f"alpha={a} outside (0, 1]")
        if not spec.slack_coeffs:
            v.append("slack_coeffs missing")
        elif a is not None and 0.0 < a <= 1.0:
            bound = 1.0 / (1.0 + a)
            frac = Fraction(bound).limit_denominator(1000)
            shown = f"{frac.numerator}/{frac.denominator}" if frac.denominator > 1 else f"{bound:g}"
            for i, c in enumerate(spec.slack_coeffs, start=1):
                if not c > 0.0:
                    v.append(f"c_{i}={c:g} must be > 0")
                elif c > bound * (1 + 1e-15):
                    v.append(f"c_{i}={c:g} > 1/(1+alpha)={shown}")
    elif spec.family is Family.TABULATED and spec.alpha is not None:
        if not (0.0 < spec.alpha <= 1.0):
            v.append(f"alpha={spec.alpha} outside (0, 1]")

    if spec.family is Family.TABULATED:
        v.extend(_check_tabulated(spec))
        if not v:
            rep.linear = all(
                all(sum(o["children"].values()) == 1 for o in row if o["p"] > 0)
                for row in _tab_rows(spec)
            )
    else:
        if spec.kernel is None:
            v.append("kernel descriptor missing")
        else:
            v.extend(_check_kernel(spec.kernel, N))
        rep.linear = spec.family is Family.LINEAR
    return rep


def _check_kernel(kernel: dict[str, Any], N: int) -> list[str]:
    out = []
    kind = kernel.get("type")
    if kind == "geometric":
        rho = kernel.get("rho") or []
        if not rho:
            out.append("geometric kernel needs a non-empty rho list")
        for i, r in enumerate(rho, start=1):
            if not (0.0 < float(r) <= 1.0):
                out.append(f"kernel rho_{i}={r} outside (0, 1]")
    elif kind == "explicit":
        rows = kernel.get("rows") or []
        tail = kernel.get("tail") or [0.0] * len(rows)
        if len(rows) < N:
            out.append(f"explicit kernel has {len(rows)} rows, need {N}")
        for i, (row, t) in enumerate(zip(rows, tail), start=1):
            if min(row, default=0.0) < 0 or t < 0:
                out.append(f"kernel row {i} has negative entries")
            s = math.fsum(row) + t
            if abs(s - 1.0) > ROW_SUM_TOL:
                out.append(f"kernel row {i} sums to {s:.15g}, not 1")
    elif kind != "shift":
        out.append(f"unknown kernel type {kind!r}")
    return out


def _tab_rows(spec: ModelSpec) -> list[list[dict]]:
    rows = []
    for row in spec.tabulated_rows or ():
        rows.append(
            [
                {
                    "p": float(o["p"]),
                    "children": {int(k): int(c) for k, c in (o.get("children") or {}).items() if int(c)},
                }
                for o in row
            ]
        )
    return rows


def _check_tabulated(spec: ModelSpec) -> list[str]:
    out = []
    rows = spec.tabulated_rows or ()
    if len(rows) < spec.truncation_N:
        out.append(f"tabulated_rows has {len(rows)} rows, need {spec.truncation_N}")
        return out
    for i, row in enumerate(_tab_rows(spec)[: spec.truncation_N], start=1):
        ps = [o["p"] for o in row]
        if min(ps, default=-1.0) < 0:
            out.append(f"tabulated row {i} has negative probabilities")
        s = math.fsum(ps)
        if abs(s - 1.0) > ROW_SUM_TOL:
            out.append(f"tabulated row {i} probabilities sum to {s:.15g}, not 1")
        for o in row:
            if any(k < 1 or c < 0 for k, c in o["children"].items()):
                out.append(f"tabulated row {i} has an invalid child entry")
                break
    return out


# ----------------------------------------------------------------------------
# kernels


def _kernel_dense(kernel: dict[str, Any], N: int) -> tuple[np.ndarray, np.ndarray]:
    """Untruncated rows restricted to ``j <= N`` and the mass beyond ``N``."""
    kind = kernel["type"]
    if kind == "geometric":
        rho = _cycle([float(r) for r in kernel["rho"]], N)
        j = np.arange(N)
        K = rho[:, None] * (1.0 - rho[:, None]) ** j[None, :]
        beyond = (1.0 - rho) ** N
    elif kind == "explicit":
        rows = kernel["rows"]
        tail = kernel.get("tail") or [0.0] * len(rows)
        K = np.zeros((N, N))
        beyond = np.zeros(N)
        for i in range(N):
            row = np.asarray(rows[i], dtype=float)
            K[i, : min(N, len(row))] = row[:N]
            beyond[i] = math.fsum(row[N:]) + float(tail[i])
    elif kind == "shift":
        K = np.eye(N, k=1)
        beyond = np.zeros(N)
        beyond[-1] = 1.0
    else:  # pragma: no cover - rejected by validation
        raise SpecError([f"unknown kernel type {kind!r}"])
    return K, beyond


def _kernel_tail(kernel: dict[str, Any], N: int, N0: int) -> np.ndarray:
    """Untruncated ``sum_{j > N0} pi_ij`` for the retained rows ``i <= N``."""
    kind = kernel["type"]
    if kind == "geometric":
        rho = _cycle([float(r) for r in kernel["rho"]], N)
        return (1.0 - rho) ** N0
    if kind == "shift":
        return (np.arange(2, N + 2) > N0).astype(float)
    rows = kernel["rows"]
    tail = kernel.get("tail") or [0.0] * len(rows)
    return np.array([math.fsum(rows[i][N0:]) + float(tail[i]) for i in range(N)])


# ----------------------------------------------------------------------------
# child-count law of the slack family


def survival_table(alpha: float, k_max: int) -> np.ndarray:
    """``tau[k] = P(K > k) / c`` for ``k = 1..k_max`` (index 0 unused).

    Closed form ``alpha Gamma(k - alpha) / (Gamma(1 - alpha) Gamma(k + 1))``;
    successive ratios are ``(k - alpha) / (k + 1)``. For ``alpha = 1`` the
    law is supported on {0, 1, 2}, so ``tau = (., 1, 0, 0, ...)``.
    """
    tau = np.zeros(k_max + 1)
    if alpha >= 1.0:
        tau[1] = 1.0
        return tau
    k = np.arange(1, k_max + 1, dtype=float)
    tau[1:] = alpha * np.exp(gammaln(k - alpha) - gammaln(1.0 - alpha) - gammaln(k + 1.0))
    return tau


def _tau_scalar(alpha: float, k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    return alpha * np.exp(gammaln(k - alpha) - gammaln(1.0 - alpha) - gammaln(k + 1.0))


@dataclass
class ChildCountPMF:
    p: np.ndarray
    tail: float

    @property
    def k_max(self) -> int:
        return len(self.p) - 1


def slack_pmf(alpha: float, c: float, k_max: int) -> ChildCountPMF:
    if k_max < 2:
        raise DomainError(f"k_max={k_max} must be >= 2")
    tau = survival_table(alpha, k_max)
    p = np.empty(k_max + 1)
    p[0] = c
    p[1] = 1.0 - c * (1.0 + alpha)
    k = np.arange(2, k_max + 1)
    p[2:] = c * tau[1:k_max] * (1.0 + alpha) / k
    return ChildCountPMF(p=p, tail=float(c * tau[k_max]) if k_max >= 1 else 1.0)


def child_count_pmf(spec: ModelSpec, i: int, k_max: int) -> ChildCountPMF:
    """Law of the total child count of a type-``i`` parent (``i`` 1-based).

    For the slack family: ``p_0 = c_i``, ``p_1 = 1 - c_i (1 + alpha)``,
    ``p_2 = c_i alpha(1 + alpha)/2`` and ``p_(k+1) = p_k (k - 1 - alpha)/(k + 1)``.
    The returned tail is ``P(K > k_max)`` in closed form.
    """
    if k_max < 2:
        raise DomainError(f"k_max={k_max} must be >= 2")
    if spec.family is Family.SLACK_KERNEL:
        return slack_pmf(float(spec.alpha), float(spec.coeffs()[i - 1]), k_max)
    if spec.family is Family.LINEAR:
        p = np.zeros(k_max + 1)
        p[1] = 1.0
        return ChildCountPMF(p, 0.0)
    p = np.zeros(k_max + 1)
    tail = 0.0
    for o in _tab_rows(spec)[i - 1]:
        k = sum(o["children"].values())
        if k <= k_max:
            p[k] += o["p"]
        else:
            tail += o["p"]
    return ChildCountPMF(p, tail)


def truncated_first_moment(pmf: ChildCountPMF, K: int) -> float:
    """``E[Z; Z > K]`` for a critical count law (mean 1) from its table."""
    k = np.arange(len(pmf.p))
    return max(0.0, 1.0 - math.fsum(k[: K + 1] * pmf.p[: K + 1]))


# ----------------------------------------------------------------------------
# the built model


class BranchingModel:
    """Immutable numerical form of a validated :class:`ModelSpec`.

    ``K`` is the effective N x N type kernel after the tail policy is
    applied (DISCARD drops children of types > N, PROJECT_LAST relabels them
    as type N). ``escaped`` is the untruncated kernel mass beyond N per row.
    """

    def __init__(self, spec: ModelSpec, k_max: int = DEFAULT_K_MAX):
        report = validate_spec(spec)
        if not report.valid:
            raise SpecError(report.violations)
        self.spec = spec
        self.report = report
        self.family = spec.family
        self.N = N = spec.truncation_N
        self.policy = spec.tail_policy
        self.alpha = spec.alpha
        self.k_max = k_max
        if spec.family is Family.TABULATED:
            self._build_tabulated()
        else:
            K, beyond = _kernel_dense(spec.kernel, N)
            self.escaped = beyond
            if self.policy is TailPolicy.PROJECT_LAST:
                K = K.copy()
                K[:, -1] += beyond
            self.K = K
            self.c = spec.coeffs()
            self.mean = K
            self._tau = survival_table(float(spec.alpha or 1.0), k_max)
            cdf = np.cumsum(K, axis=1)
            self._type_cdf = np.minimum(cdf, 1.0)
        self.mean.setflags(write=False)

    def _build_tabulated(self) -> None:
        N = self.N
        rows = _tab_rows(self.spec)[:N]
        parent, prob, r, col, val = [], [], [], [], []
        mean = np.zeros((N, N))
        escaped = np.zeros(N)
        children: list[tuple[np.ndarray, np.ndarray]] = []
        for i, row in enumerate(rows):
            for o in row:
                idx = len(parent)
                parent.append(i)
                prob.append(o["p"])
                agg: dict[int, int] = {}
                for j, cnt in o["children"].items():
                    if j > N:
                        escaped[i] += o["p"] * cnt
                        if self.policy is TailPolicy.DISCARD:
                            continue
                        j = N
                    agg[j - 1] = agg.get(j - 1, 0) + cnt
                for j, cnt in agg.items():
                    r.append(idx)
                    col.append(j)
                    val.append(cnt)
                    mean[i, j] += o["p"] * cnt
                children.append((np.fromiter(agg.keys(), dtype=np.int64), np.fromiter(agg.values(), dtype=np.int64)))
        n_out = len(parent)
        self._out_parent = np.asarray(parent, dtype=np.int64)
        self._out_prob = np.asarray(prob)
        self._out_counts = sparse.csr_matrix((np.asarray(val, float), (r, col)), shape=(n_out, N))
        self._flat_off = np.concatenate([[0], np.cumsum([len(t) for t, _ in children])]).astype(np.int64)
        self._flat_types = np.concatenate([t for t, _ in children] + [np.zeros(0, np.int64)])
        self._flat_counts = np.concatenate([c for _, c in children] + [np.zeros(0, np.int64)])
        self._out_total = np.asarray(self._out_counts.sum(axis=1)).ravel()
        # per-type outcome cdf over a flat outcome index
        self._out_start = np.searchsorted(self._out_parent, np.arange(N + 1))
        self._out_cdf = np.empty(n_out)
        for i in range(N):
            a, b = self._out_start[i], self._out_start[i + 1]
            self._out_cdf[a:b] = np.minimum(np.cumsum(self._out_prob[a:b]), 1.0)
        self.mean = mean
        self.K = None
        self.c = None
        self.escaped = escaped

    # -- generating functions ------------------------------------------------

    @property
    def is_linear(self) -> bool:
        return self.report.linear

    def complement(self, Q: np.ndarray) -> np.ndarray:
        """``1 - F(1 - Q)`` for all retained types at once."""
        Q = np.asarray(Q, dtype=float)
        if self.family is Family.TABULATED:
            with np.errstate(divide="ignore"):
                logs = np.log1p(-Q)
            E = self._out_counts @ logs
            per_outcome = -np.expm1(E)
            return np.bincount(self._out_parent, weights=self._out_prob * per_outcome, minlength=self.N)
        Y = self.K @ Q
        if self.family is Family.LINEAR:
            return Y
        return Y - self.c * Y ** (1.0 + self.alpha)

    def nonlinear_part(self, Q: np.ndarray) -> np.ndarray:
        """``M Q - (1 - F(1 - Q))``: the nonnegative remainder beyond linear order."""
        Q = np.asarray(Q, dtype=float)
        if self.family is Family.SLACK_KERNEL:
            Y = self.K @ Q
            return self.c * Y ** (1.0 + self.alpha)
        if self.family is Family.LINEAR:
            return np.zeros(self.N)
        return self.mean @ Q - self.complement(Q)

    def step(self, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(1 - F(1 - Q), N(Q))`` from a single kernel product."""
        if self.family is Family.SLACK_KERNEL:
            Y = self.K @ Q
            nl = self.c * Y ** (1.0 + self.alpha)
            return Y - nl, nl
        if self.family is Family.LINEAR:
            return self.K @ Q, np.zeros(self.N)
        comp = self.complement(Q)
        return comp, self.mean @ Q - comp

    def pgf(self, s: np.ndarray) -> np.ndarray:
        """``F(s)`` for all retained types; components of s must lie in [0, 1]."""
        s = _check_point(s, self.N)
        if self.family is Family.TABULATED:
            return 1.0 - self.complement(1.0 - s)
        # children beyond N are invisible under DISCARD, i.e. carry s_j = 1
        x = self.K @ s + (1.0 - self.K.sum(axis=1))
        x = np.minimum(x, 1.0)
        if self.family is Family.LINEAR:
            return x
        return x + self.c * (1.0 - x) ** (1.0 + self.alpha)

    def law(self, i: int) -> "OffspringLaw":
        return OffspringLaw(self, i)

    # -- sampling ------------------------------------------------------------

    def draw_counts(self, types: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Child counts by inverse survival function; ``w`` uniform in (0, 1).

        ``K = min{k : P(K > k) <= w}``; draws past the table continue on the
        closed-form tail by bisection, so the law is never truncated.
        """
        types = np.asarray(types, dtype=np.int64)
        w = np.asarray(w, dtype=float)
        if self.family is Family.LINEAR:
            return np.ones(len(types), dtype=np.int64)
        c = self.c[types]
        out = np.zeros(len(types), dtype=np.int64)
        pos = w < 1.0 - c
        target = w[pos] / c[pos]
        # tau is strictly decreasing on 1..k_max (or 1, 0, 0.. for alpha=1)
        rev = self._tau[1:][::-1]
        n_le = np.searchsorted(rev, target, side="right")
        k = self.k_max - n_le + 1
        far = n_le == 0
        if far.any():
            k[far] = _tail_bisect(float(self.alpha), target[far], self.k_max)
        out[pos] = k
        return out

    def draw_types(self, parents: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Child types (0-based) from kernel rows; -1 marks a discarded child."""
        parents = np.asarray(parents, dtype=np.int64)
        out = np.full(len(parents), -1, dtype=np.int64)
        if len(parents) == 0:
            return out
        order = np.argsort(parents, kind="stable")
        sp = parents[order]
        bounds = np.flatnonzero(np.diff(sp)) + 1
        for chunk in np.split(order, bounds):
            t = parents[chunk[0]]
            j = np.searchsorted(self._type_cdf[t], u[chunk], side="right")
            j[j >= self.N] = -1
            out[chunk] = j
        if self.policy is TailPolicy.PROJECT_LAST:
            out[out < 0] = self.N - 1
        return out

    def draw_offspring(self, parents: np.ndarray, uniform) -> tuple[np.ndarray, np.ndarray]:
        """Offspring of a batch of particles.

        ``uniform(particle_index, slot)`` must return independent uniforms in
        (0, 1) for the given coordinates; slot 0 drives the child count and
        slot ``1 + c`` the type of child ``c``. Returns ``(owner, type)``
        arrays over the retained children.
        """
        parents = np.asarray(parents, dtype=np.int64)
        P = len(parents)
        pidx = np.arange(P, dtype=np.int64)
        if self.family is Family.TABULATED:
            w = uniform(pidx, np.zeros(P, dtype=np.int64))
            o = self._outcome(parents, w)
            sizes = self._flat_off[o + 1] - self._flat_off[o]
            owner_cells = np.repeat(pidx, sizes)
            start = np.cumsum(sizes) - sizes
            pos = np.repeat(self._flat_off[o], sizes) + np.arange(owner_cells.size) - np.repeat(start, sizes)
            counts = self._flat_counts[pos]
            return np.repeat(owner_cells, counts), np.repeat(self._flat_types[pos], counts)
        w = uniform(pidx, np.zeros(P, dtype=np.int64))
        K = self.draw_counts(parents, w)
        owner = np.repeat(pidx, K)
        if owner.size == 0:
            return owner, owner.copy()
        start = np.cumsum(K) - K
        slot = np.arange(owner.size, dtype=np.int64) - np.repeat(start, K) + 1
        u = uniform(owner, slot)
        types = self.draw_types(parents[owner], u)
        keep = types >= 0
        return owner[keep], types[keep]

    def count_totals(self, parents: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Total child counts before type assignment (for explosion checks)."""
        if self.family is Family.TABULATED:
            return self._out_total[self._outcome(parents, w)].astype(np.int64)
        return self.draw_counts(parents, w)

    def _outcome(self, parents: np.ndarray, w: np.ndarray) -> np.ndarray:
        # u = 1 - w keeps "count" and "outcome" draws on one uniform
        u = 1.0 - np.asarray(w)
        out = np.empty(len(parents), dtype=np.int64)
        for t in np.unique(parents):
            sel = parents == t
            a, b = self._out_start[t], self._out_start[t + 1]
            k = np.searchsorted(self._out_cdf[a:b], u[sel], side="right")
            out[sel] = a + np.minimum(k, b - a - 1)
        return out

    # -- tails ---------------------------------------------------------------

    def kernel_tail(self, N0: int) -> np.ndarray:
        """Untruncated mean mass on types ``> N0`` for each retained row."""
        if self.family is Family.TABULATED:
            out = np.zeros(self.N)
            for i, row in enumerate(_tab_rows(self.spec)[: self.N]):
                out[i] = math.fsum(o["p"] * c for o in row for j, c in o["children"].items() if j > N0)
            return out
        return _kernel_tail(self.spec.kernel, self.N, N0)

    @property
    def row_deficit(self) -> np.ndarray:
        """``1 - sum_j M_ij`` per row, without cancellation where it is known in closed form.

        Kernel rows are stochastic before truncation, so their deficit is the
        discarded mass (zero under PROJECT_LAST).
        """
        if self.family is Family.TABULATED:
            return np.array([1.0 - math.fsum(row) for row in self.mean])
        if self.policy is TailPolicy.PROJECT_LAST:
            return np.zeros(self.N)
        return self.escaped.copy()

    def untruncated_row_sums(self) -> np.ndarray:
        return self.mean.sum(axis=1) + (self.escaped if self.policy is TailPolicy.DISCARD else 0.0)


def _tail_bisect(alpha: float, target: np.ndarray, k_lo: int) -> np.ndarray:
    """Smallest ``k > k_lo`` with ``tau(k) <= target`` (tau decreasing)."""
    lo = np.full(len(target), k_lo, dtype=np.int64)  # tau(lo) > target
    hi = np.full(len(target), 2 * k_lo, dtype=np.int64)
    while True:
        bad = _tau_scalar(alpha, hi) > target
        if not bad.any():
            break
        lo[bad] = hi[bad]
        hi[bad] *= 2
    while True:
        gap = hi - lo > 1
        if not gap.any():
            return hi
        mid = (lo + hi) // 2
        ok = _tau_scalar(alpha, mid) <= target
        hi = np.where(gap & ok, mid, hi)
        lo = np.where(gap & ~ok, mid, lo)


def _check_point(s, N: int) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape != (N,):
        raise DomainError(f"point has shape {s.shape}, expected ({N},)")
    if np.any(s < 0.0) or np.any(s > 1.0) or np.any(np.isnan(s)):
        raise DomainError("pgf argument must lie in [0, 1]^N")
    return s


def build_model(spec: ModelSpec, k_max: int = DEFAULT_K_MAX) -> BranchingModel:
    return BranchingModel(spec, k_max=k_max)


@dataclass(frozen=True)
class OffspringLaw:
    """Single-type view of a built model (``type_index`` is 1-based)."""

    model: BranchingModel
    type_index: int

    def pgf(self, s) -> float:
        return pgf_eval(self, s)

    @property
    def mean_row(self) -> np.ndarray:
        return mean_row(self)

    def pmf_child_count(self, k_max: int = 64) -> ChildCountPMF:
        return child_count_pmf(self.model.spec, self.type_index, k_max)


def pgf_eval(law: OffspringLaw, s) -> float:
    """``F_i(s) = E prod_j s_j^(Z_ij)``."""
    return float(law.model.pgf(s)[law.type_index - 1])


def mean_row(law: OffspringLaw) -> np.ndarray:
    """``M_ij = dF_i/ds_j`` at ``s = 1`` (after the tail policy)."""
    return law.model.mean[law.type_index - 1].copy()


def sample_offspring(law: OffspringLaw, rng: np.random.Generator) -> dict[int, int]:
    """One offspring vector of a type-``i`` parent as ``{type: count}`` (1-based)."""
    m = law.model
    parents = np.array([law.type_index - 1])

    def uniform(idx, slot):
        return _open_uniform(rng, len(idx))

    _, types = m.draw_offspring(parents, uniform)
    vals, counts = np.unique(types, return_counts=True)
    return {int(t) + 1: int(c) for t, c in zip(vals, counts)}


def _open_uniform(rng: np.random.Generator, n: int) -> np.ndarray:
    # (0, 1): a zero would map to the infinitely large child count
    u = rng.random(n)
    return np.where(u == 0.0, 0.5 * 2.0**-53, u)


@dataclass
class TailMass:
    N0: int
    raw: float
    relative: float


def tail_mass(spec: ModelSpec | BranchingModel, N0: int) -> TailMass:
    """``sup_i sum_{j > N0} M_ij`` over retained types, on the effective kernel.

    Raw and divided by the row sum ``M_i``. Mass already discarded or
    relabelled by the tail policy does not count, so ``N0 = N`` gives 0.
    """
    model = spec if isinstance(spec, BranchingModel) else build_model(spec)
    if N0 > model.N:
        raise DomainError(f"N0={N0} exceeds truncation_N={model.N}")
    if model.family is Family.TABULATED:
        raw_rows = model.mean[:, N0:].sum(axis=1)
    elif model.spec.kernel["type"] == "geometric":
        # closed form: (1 - rho)^N0 minus what lies past N
        rho = _cycle([float(r) for r in model.spec.kernel["rho"]], model.N)
        past = (1.0 - rho) ** model.N
        raw_rows = (1.0 - rho) ** N0 - past
        if model.policy is TailPolicy.PROJECT_LAST and N0 < model.N:
            raw_rows = raw_rows + past
    else:
        raw_rows = model.mean[:, N0:].sum(axis=1)
    sums = model.mean.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(sums > 0, raw_rows / sums, 0.0)
    return TailMass(N0=N0, raw=float(raw_rows.max()), relative=float(rel.max()))
