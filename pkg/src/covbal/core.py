"""Trial layout, weights, and the imbalance arithmetic shared by every design.

Strata are numbered row-major over the covariate levels with the first
covariate varying slowest. Profiles are tuples of 1-based levels.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

WEIGHT_SUM_TOL = 1e-9
TIE_TOL = 1e-9


class InvalidProfileError(ValueError):
    pass


class WeightError(ValueError):
    """Raised for negative weights or weights that do not sum to one."""

    def __init__(self, message: str, field: str = "weights"):
        super().__init__(message)
        self.field = field


class Arm(enum.IntEnum):
    TREATMENT1 = 1
    TREATMENT2 = 2

    @property
    def sign(self) -> int:
        return 1 if self is Arm.TREATMENT1 else -1


@dataclass(frozen=True)
class CovariateStructure:
    levels: tuple[int, ...]

    def __post_init__(self):
        levels = tuple(int(m) for m in self.levels)
        if not levels:
            raise ValueError("need at least one covariate")
        if any(m < 2 for m in levels):
            raise ValueError(f"every covariate needs >= 2 levels, got {levels}")
        object.__setattr__(self, "levels", levels)

    @property
    def num_covariates(self) -> int:
        return len(self.levels)

    def stratum_count(self) -> int:
        return math.prod(self.levels)

    @cached_property
    def strides(self) -> tuple[int, ...]:
        strides = []
        acc = 1
        for m in reversed(self.levels):
            strides.append(acc)
            acc *= m
        return tuple(reversed(strides))

    @cached_property
    def profile_table(self) -> tuple[tuple[int, ...], ...]:
        """Profile of every stratum, indexed by linear stratum index."""
        return tuple(
            tuple(int(k) + 1 for k in idx) for idx in np.ndindex(*self.levels)
        )

    def validate(self, profile: Sequence[int]) -> tuple[int, ...]:
        profile = tuple(int(k) for k in profile)
        if len(profile) != self.num_covariates:
            raise InvalidProfileError(
                f"profile {profile} has {len(profile)} levels, "
                f"structure has {self.num_covariates} covariates"
            )
        for i, (k, m) in enumerate(zip(profile, self.levels)):
            if not 1 <= k <= m:
                raise InvalidProfileError(
                    f"covariate {i + 1} level {k} outside 1..{m}"
                )
        return profile


def stratum_index(structure: CovariateStructure, profile: Sequence[int]) -> int:
    profile = structure.validate(profile)
    return sum((k - 1) * s for k, s in zip(profile, structure.strides))


def stratum_profile(structure: CovariateStructure, index: int) -> tuple[int, ...]:
    if not 0 <= index < structure.stratum_count():
        raise InvalidProfileError(f"stratum index {index} out of range")
    return structure.profile_table[index]


@dataclass(frozen=True)
class WeightConfig:
    w_overall: float
    w_stratum: float
    w_margin: tuple[float, ...]

    def __post_init__(self):
        margin = tuple(float(w) for w in self.w_margin)
        object.__setattr__(self, "w_margin", margin)
        object.__setattr__(self, "w_overall", float(self.w_overall))
        object.__setattr__(self, "w_stratum", float(self.w_stratum))
        if self.w_overall < 0:
            raise WeightError("negative overall weight", "w_overall")
        if self.w_stratum < 0:
            raise WeightError("negative stratum weight", "w_stratum")
        for i, w in enumerate(margin):
            if w < 0:
                raise WeightError(f"negative margin weight {w}", f"w_margin[{i}]")
        total = self.w_overall + self.w_stratum + sum(margin)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise WeightError(
                f"weights w_overall + w_stratum + sum(w_margin) = {total!r}, must be 1",
                "weights",
            )

    @classmethod
    def normalized(cls, w_overall, w_stratum, w_margin) -> "WeightConfig":
        total = w_overall + w_stratum + sum(w_margin)
        if total <= 0:
            raise WeightError("weights must have a positive sum")
        return cls(w_overall / total, w_stratum / total, [w / total for w in w_margin])

    def check_structure(self, structure: CovariateStructure) -> None:
        if len(self.w_margin) != structure.num_covariates:
            raise WeightError(
                f"{len(self.w_margin)} margin weights for "
                f"{structure.num_covariates} covariates",
                "w_margin",
            )


@dataclass
class ImbalanceState:
    """Signed within-stratum differences plus counts.

    Marginal and overall differences are kept in step with ``d_by_stratum``
    by :func:`apply_assignment`; :meth:`recomputed_margins` rebuilds them
    from scratch.
    """

    structure: CovariateStructure
    d_by_stratum: np.ndarray
    n_by_stratum: np.ndarray
    n_total: int = 0
    margins: list[np.ndarray] = field(default=None)
    overall: int = 0

    @classmethod
    def zeros(cls, structure: CovariateStructure) -> "ImbalanceState":
        m = structure.stratum_count()
        return cls(
            structure,
            np.zeros(m, dtype=np.int64),
            np.zeros(m, dtype=np.int64),
            0,
            [np.zeros(k, dtype=np.int64) for k in structure.levels],
            0,
        )

    @classmethod
    def from_counts(cls, structure: CovariateStructure, d, n=None) -> "ImbalanceState":
        """Build a state from per-stratum differences (and optionally counts).

        With ``n`` omitted each stratum gets the fewest patients consistent
        with its difference, i.e. ``|d|``.
        """
        d = np.asarray(d, dtype=np.int64).copy()
        if d.shape != (structure.stratum_count(),):
            raise ValueError(f"expected {structure.stratum_count()} strata, got {d.shape}")
        n = np.abs(d) if n is None else np.asarray(n, dtype=np.int64).copy()
        state = cls(structure, d, n, int(n.sum()))
        state.margins = state.recomputed_margins()
        state.overall = int(d.sum())
        return state

    def recomputed_margins(self) -> list[np.ndarray]:
        arr = self.d_by_stratum.reshape(self.structure.levels)
        out = []
        for i in range(self.structure.num_covariates):
            axes = tuple(j for j in range(self.structure.num_covariates) if j != i)
            out.append(arr.sum(axis=axes).astype(np.int64))
        return out

    def copy(self) -> "ImbalanceState":
        return ImbalanceState(
            self.structure,
            self.d_by_stratum.copy(),
            self.n_by_stratum.copy(),
            self.n_total,
            [mg.copy() for mg in self.margins],
            self.overall,
        )

    def negated(self) -> "ImbalanceState":
        out = self.copy()
        out.d_by_stratum = -out.d_by_stratum
        out.margins = [-mg for mg in out.margins]
        out.overall = -out.overall
        return out

    def check_invariants(self) -> None:
        d, n = self.d_by_stratum, self.n_by_stratum
        assert np.all(np.abs(d) <= n), "|d| exceeds stratum count"
        assert np.all((d - n) % 2 == 0), "stratum parity broken"
        assert self.n_total == int(n.sum()), "n_total mismatch"
        assert self.overall == int(d.sum()), "overall cache stale"
        assert (self.overall - self.n_total) % 2 == 0, "overall parity broken"
        for i, (cached, fresh) in enumerate(zip(self.margins, self.recomputed_margins())):
            assert np.array_equal(cached, fresh), f"margin cache stale for covariate {i + 1}"
            assert int(fresh.sum()) == self.overall, "margins do not sum to overall"

    def to_json(self) -> dict:
        return {
            "levels": list(self.structure.levels),
            "d_by_stratum": self.d_by_stratum.tolist(),
            "n_by_stratum": self.n_by_stratum.tolist(),
            "n_total": self.n_total,
        }


def overall_imbalance(state: ImbalanceState) -> int:
    return state.overall


def marginal_imbalance(
    state: ImbalanceState, structure: CovariateStructure, covariate: int, level: int
) -> int:
    """Difference on margin (covariate; level), both 1-based."""
    if not 1 <= covariate <= structure.num_covariates:
        raise InvalidProfileError(f"covariate {covariate} out of range")
    if not 1 <= level <= structure.levels[covariate - 1]:
        raise InvalidProfileError(f"level {level} out of range for covariate {covariate}")
    return int(state.margins[covariate - 1][level - 1])


def stratum_weight(
    structure: CovariateStructure,
    weights: WeightConfig,
    target: Sequence[int],
    other: Sequence[int],
) -> float:
    """Weight that ``delta`` at ``target`` places on the difference in ``other``."""
    target = structure.validate(target)
    other = structure.validate(other)
    w = weights.w_overall
    for wm, a, b in zip(weights.w_margin, target, other):
        if a == b:
            w += wm
    if target == other:
        w += weights.w_stratum
    return w


def weight_matrix(structure: CovariateStructure, weights: WeightConfig) -> np.ndarray:
    """Matrix of stratum weights, entry (r, s) = stratum_weight(r, s)."""
    prof = np.array(structure.profile_table)
    same = prof[:, None, :] == prof[None, :, :]
    u = weights.w_overall + same @ np.asarray(weights.w_margin)
    u += weights.w_stratum * np.eye(len(prof))
    return u


def delta(
    state: ImbalanceState,
    structure: CovariateStructure,
    weights: WeightConfig,
    profile: Sequence[int],
) -> float:
    profile = structure.validate(profile)
    r = stratum_index(structure, profile)
    return _delta_at(state, weights, profile, r)


def _delta_at(state, weights: WeightConfig, profile, r: int) -> float:
    value = weights.w_overall * state.overall + weights.w_stratum * int(state.d_by_stratum[r])
    for wm, mg, k in zip(weights.w_margin, state.margins, profile):
        value += wm * int(mg[k - 1])
    return value


def imbalance_pair(
    state: ImbalanceState,
    structure: CovariateStructure,
    weights: WeightConfig,
    profile: Sequence[int],
) -> tuple[float, float]:
    """Weighted squared imbalance if the patient went to arm 1 and to arm 2."""
    profile = structure.validate(profile)
    r = stratum_index(structure, profile)
    current = [(weights.w_overall, state.overall)]
    current += [(wm, int(mg[k - 1])) for wm, mg, k in zip(weights.w_margin, state.margins, profile)]
    current.append((weights.w_stratum, int(state.d_by_stratum[r])))
    imb1 = sum(w * (d + 1) ** 2 for w, d in current)
    imb2 = sum(w * (d - 1) ** 2 for w, d in current)
    return imb1, imb2


def apply_assignment(
    state: ImbalanceState,
    structure: CovariateStructure,
    profile: Sequence[int],
    arm: Arm,
) -> ImbalanceState:
    """Record one assignment in place and return the same state."""
    profile = structure.validate(profile)
    _apply(state, stratum_index(structure, profile), profile, Arm(arm).sign)
    return state


def _apply(state: ImbalanceState, r: int, profile, sign: int) -> None:
    state.d_by_stratum[r] += sign
    state.n_by_stratum[r] += 1
    state.n_total += 1
    state.overall += sign
    for mg, k in zip(state.margins, profile):
        mg[k - 1] += sign
