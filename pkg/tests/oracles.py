"""Independent reference implementations used by the tests.

None of these call into the code under test beyond plain data access.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import binom


def stationary_dense(M: np.ndarray) -> np.ndarray:
    """Left Perron vector of a row-stochastic matrix by a linear solve."""
    N = M.shape[0]
    A = M.T - np.eye(N)
    A[-1, :] = 1.0
    b = np.zeros(N)
    b[-1] = 1.0
    return np.linalg.solve(A, b)


def geometric_rows(rho, N: int) -> np.ndarray:
    rho = np.resize(np.asarray(rho, dtype=float), N)
    out = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            out[i, j] = rho[i] * (1 - rho[i]) ** j
    return out


def scalar_recursion(C: float, alpha: float, n_max: int, q0: float = 1.0) -> np.ndarray:
    q = np.empty(n_max + 1)
    q[0] = q0
    for k in range(n_max):
        q[k + 1] = q[k] - C * q[k] ** (1 + alpha)
    return q


def kolmogorov_survival(n_max: int) -> np.ndarray:
    """Q(n) for f(s) = s + 0.5 (1 - s)^2 iterated in s-space from 0."""
    s = 0.0
    out = [1.0]
    for _ in range(n_max):
        s = s + 0.5 * (1 - s) ** 2
        out.append(1 - s)
    return np.array(out)


def slack_pmf_gamma(alpha: float, c: float, k_max: int) -> np.ndarray:
    """Coefficients of x + c (1 - x)^(1+alpha) from the binomial series."""
    a = 1 + alpha
    k = np.arange(k_max + 1)
    p = c * (-1.0) ** k * binom(a, k)
    p[1] += 1.0
    return p


def enumerate_tabulated_pgf(rows, s) -> np.ndarray:
    """Brute-force sum over tabulated outcomes of prod_j s_j^count."""
    out = []
    for row in rows:
        total = 0.0
        for o in row:
            term = o["p"]
            for j, cnt in o["children"].items():
                term *= s[int(j) - 1] ** cnt
            total += term
        out.append(total)
    return np.array(out)


def enumerate_small_pgf(alpha, c, pi, s, k_max: int) -> float:
    """F(s) = sum_k p_k (pi . s)^k for a single row by explicit enumeration."""
    p = slack_pmf_gamma(alpha, c, k_max)
    x = float(np.dot(pi, s)) + (1 - float(np.sum(pi)))
    return float(sum(p[k] * x**k for k in range(k_max + 1)))


def multinomial_enumeration(pmf_counts, pi, s, k_max: int) -> float:
    """F(s) by summing over every (count, type assignment) pair; tiny cases only."""
    total = 0.0
    types = range(len(pi))
    for k in range(k_max + 1):
        for assign in itertools.product(types, repeat=k):
            total += pmf_counts[k] * math.prod(pi[t] * s[t] for t in assign)
    return total
