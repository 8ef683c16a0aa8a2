"""Sufficient conditions for positive recurrence of the stratum-imbalance chain.

Nothing here proves recurrence; it evaluates the weight conditions and
offers a one-step drift diagnostic for the 2x2 layout.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from covbal.core import (
    TIE_TOL,
    CovariateStructure,
    ImbalanceState,
    WeightConfig,
    _apply,
    _delta_at,
)
from covbal.designs import biased_coin

DET_TOL = 1e-12


class IllConditionedWeightsError(ArithmeticError):
    def __init__(self, determinant: float):
        super().__init__(f"2x2 recurrence system is singular (determinant {determinant:.3e})")
        self.determinant = determinant


class UnsupportedStructureError(ValueError):
    pass


@dataclass(frozen=True)
class ConditionB:
    x: tuple[float, float, float]
    l1_norm: float
    satisfied: bool


@dataclass(frozen=True)
class ConditionBPrime:
    c_of_wo: float
    satisfied: bool


@dataclass(frozen=True)
class ConditionReport:
    condition_a: bool
    u_star: float
    condition_c: bool
    condition_b: ConditionB | None = None
    condition_b_prime: ConditionBPrime | None = None

    @property
    def recurrence_guaranteed(self) -> bool:
        """True when (A and C) hold, or on a 2x2 layout (A and B)."""
        ok = self.condition_c
        if self.condition_b is not None:
            ok = ok or self.condition_b.satisfied
        return self.condition_a and ok

    def to_json(self) -> dict:
        out = asdict(self)
        if self.condition_b is not None:
            out["condition_b"]["x"] = list(self.condition_b.x)
        out["recurrence_guaranteed"] = self.recurrence_guaranteed
        return out


def _det3(a) -> float:
    return (
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    )


def solve3(a, b) -> tuple[float, float, float]:
    """Cramer's rule for a 3x3 system; raises on a near-singular matrix."""
    det = _det3(a)
    if abs(det) < DET_TOL:
        raise IllConditionedWeightsError(det)
    x = []
    for col in range(3):
        ac = [list(row) for row in a]
        for row in range(3):
            ac[row][col] = b[row]
        x.append(_det3(ac) / det)
    return tuple(x)


def condition_b_weights(weights: WeightConfig) -> tuple[float, float, float, float]:
    """(u1, u2, u3, u4): weight on the target stratum, same level of covariate 1,
    same level of covariate 2, and the diagonal stratum."""
    if len(weights.w_margin) != 2:
        raise UnsupportedStructureError("condition B is defined for two covariates")
    wo, (wm1, wm2) = weights.w_overall, weights.w_margin
    return 1.0, wo + wm1, wo + wm2, wo


def check_condition_b(weights: WeightConfig) -> ConditionB:
    u1, u2, u3, u4 = condition_b_weights(weights)
    a = [[u1, u2, u3], [u2, u1, u4], [u3, u4, u1]]
    x = solve3(a, [u4, u3, u2])
    l1 = sum(abs(v) for v in x)
    return ConditionB(x, l1, l1 < 1.0)


def c_of_wo(w_overall: float) -> float:
    """Largest equal margin weight allowed by condition B for a given overall weight."""
    if not 0.0 <= w_overall <= 1.0:
        raise ValueError("w_overall must lie in [0, 1]")
    wo = w_overall
    return (math.sqrt((1 - wo) ** 2 + 4 * (1 + wo) ** 2) - 1 - 3 * wo) / 4


def u_star(structure: CovariateStructure, weights: WeightConfig) -> float:
    """Sum of the weights placed on all non-target strata.

    Enumerates every nonempty set of covariates on which a stratum differs
    from the target; there are prod(m_i - 1) strata per set.
    """
    weights.check_structure(structure)
    I = structure.num_covariates
    total = 0.0
    for size in range(1, I + 1):
        for subset in itertools.combinations(range(I), size):
            w = weights.w_overall + sum(
                weights.w_margin[j] for j in range(I) if j not in subset
            )
            total += w * math.prod(structure.levels[t] - 1 for t in subset)
    return total


def check_all(structure: CovariateStructure, weights: WeightConfig) -> ConditionReport:
    us = u_star(structure, weights)
    cond_b = cond_bp = None
    if structure.levels == (2, 2):
        cond_b = check_condition_b(weights)
        wm1, wm2 = weights.w_margin
        if math.isclose(wm1, wm2, rel_tol=0.0, abs_tol=1e-12):
            c = c_of_wo(weights.w_overall)
            cond_bp = ConditionBPrime(c, wm1 < c)
    return ConditionReport(
        condition_a=weights.w_stratum > 0,
        u_star=us,
        condition_c=us < 0.5,
        condition_b=cond_b,
        condition_b_prime=cond_bp,
    )


@dataclass(frozen=True)
class DriftResult:
    exact: float
    closed_form: float


def drift_delta_v(
    state: ImbalanceState,
    structure: CovariateStructure,
    weights: WeightConfig,
    p_bias: float,
    stratum_probs: Sequence[float],
) -> DriftResult:
    """Expected one-step change of V(D) = sum_r D_r^2 / p_r under the HuHu rule.

    ``exact`` enumerates all (stratum, arm) outcomes; ``closed_form`` is
    2(q - p) * sum_r sgn(delta_r) D_r + 4.
    """
    if structure.levels != (2, 2):
        raise UnsupportedStructureError(f"drift diagnostic needs a 2x2 layout, got {structure.levels}")
    probs = np.asarray(stratum_probs, dtype=float)
    if probs.shape != (4,) or np.any(probs <= 0):
        raise ValueError("stratum probabilities must be four strictly positive values")
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("stratum probabilities must sum to 1")

    if not 0.5 <= p_bias < 1.0:
        raise ValueError(f"p_bias must lie in [0.5, 1), got {p_bias}")

    def lyapunov(d):
        return float(np.sum(d.astype(float) ** 2 / probs))

    v0 = lyapunov(state.d_by_stratum)
    exact = 0.0
    for r, profile in enumerate(structure.profile_table):
        if state.n_total == 0:
            prob1 = 0.5
        else:
            prob1 = biased_coin(_delta_at(state, weights, profile, r), p_bias)
        for sign, p_arm in ((1, prob1), (-1, 1.0 - prob1)):
            nxt = state.copy()
            _apply(nxt, r, profile, sign)
            exact += probs[r] * p_arm * (lyapunov(nxt.d_by_stratum) - v0)

    q = 1.0 - p_bias
    drift_sum = 0.0
    for r, profile in enumerate(structure.profile_table):
        dl = _delta_at(state, weights, profile, r)
        sgn = 0 if abs(dl) <= TIE_TOL else (1 if dl > 0 else -1)
        drift_sum += sgn * int(state.d_by_stratum[r])
    closed = 2 * (q - p_bias) * drift_sum + 4
    return DriftResult(exact, closed)
