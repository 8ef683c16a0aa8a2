"""Sequential randomizers.

Every design exposes ``assignment_probability`` (probability of arm 1 for
the incoming patient) and ``next_assignment``, which turns a caller-supplied
uniform draw into an arm. Designs never own a random generator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from covbal.core import (
    TIE_TOL,
    Arm,
    CovariateStructure,
    ImbalanceState,
    WeightConfig,
    _apply,
    _delta_at,
    stratum_index,
)


def biased_coin(delta_value: float, p_bias: float) -> float:
    """Probability of arm 1 given the sign of the weighted imbalance."""
    if abs(delta_value) <= TIE_TOL:
        return 0.5
    # positive delta means arm 1 would add more imbalance
    return 1.0 - p_bias if delta_value > 0 else p_bias


class Design:
    def assignment_probability(self, state, structure, profile) -> float:
        raise NotImplementedError

    def next_assignment(self, state, structure, profile, uniform_draw: float) -> Arm:
        prob = self.assignment_probability(state, structure, profile)
        arm = Arm.TREATMENT1 if uniform_draw < prob else Arm.TREATMENT2
        self._advance(structure, profile, arm)
        return arm

    def _advance(self, structure, profile, arm: Arm) -> None:
        pass

    def step(self, state: ImbalanceState, profile: tuple[int, ...], r: int, u: float) -> Arm:
        """Assign and record one patient whose stratum index ``r`` is known."""
        arm = self.next_assignment(state, state.structure, profile, u)
        _apply(state, r, profile, arm.sign)
        return arm


def _check_bias(p_bias: float) -> None:
    if not 0.5 < p_bias < 1.0:
        raise ValueError(f"p_bias must lie in (0.5, 1), got {p_bias}")


@dataclass
class HuHuDesign(Design):
    """Biased coin on the weighted overall/marginal/within-stratum imbalance."""

    weights: WeightConfig
    p_bias: float = 0.85

    def __post_init__(self):
        _check_bias(self.p_bias)

    @property
    def q_bias(self) -> float:
        return 1.0 - self.p_bias

    def assignment_probability(self, state, structure, profile) -> float:
        if state.n_total == 0:
            return 0.5
        r = stratum_index(structure, profile)
        return biased_coin(_delta_at(state, self.weights, tuple(profile), r), self.p_bias)

    def step(self, state, profile, r, u):
        if state.n_total == 0:
            prob = 0.5
        else:
            prob = biased_coin(_delta_at(state, self.weights, profile, r), self.p_bias)
        sign = 1 if u < prob else -1
        _apply(state, r, profile, sign)
        return Arm.TREATMENT1 if sign == 1 else Arm.TREATMENT2


class PocockSimonDesign(HuHuDesign):
    """Marginal-only minimization: the HuHu rule with zero overall and stratum weight."""

    def __init__(self, margin_weights: Sequence[float], p_bias: float = 0.85):
        super().__init__(WeightConfig(0.0, 0.0, tuple(margin_weights)), p_bias)

    @property
    def margin_weights(self) -> tuple[float, ...]:
        return self.weights.w_margin


@dataclass
class StratifiedPermutedBlockDesign(Design):
    """Permuted blocks of ``block_size`` run independently in each stratum.

    Each stratum tracks how many arm-1 and arm-2 slots remain in its current
    block. Drawing arm 1 with probability (arm-1 slots left) / (slots left)
    realizes a uniformly random block permutation one patient at a time.
    """

    block_size: int = 4
    _left: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.block_size < 2 or self.block_size % 2:
            raise ValueError(f"block_size must be an even integer >= 2, got {self.block_size}")

    def remaining(self, r: int) -> tuple[int, int]:
        half = self.block_size // 2
        return self._left.get(r, (half, half))

    def assignment_probability(self, state, structure, profile) -> float:
        ones, twos = self.remaining(stratum_index(structure, profile))
        return ones / (ones + twos)

    def _advance(self, structure, profile, arm):
        self._take(stratum_index(structure, profile), arm)

    def _take(self, r: int, arm: Arm) -> None:
        ones, twos = self.remaining(r)
        if arm is Arm.TREATMENT1:
            ones -= 1
        else:
            twos -= 1
        if ones + twos == 0:
            self._left.pop(r, None)
        else:
            self._left[r] = (ones, twos)

    def step(self, state, profile, r, u):
        ones, twos = self.remaining(r)
        arm = Arm.TREATMENT1 if u < ones / (ones + twos) else Arm.TREATMENT2
        self._take(r, arm)
        _apply(state, r, profile, arm.sign)
        return arm


@dataclass
class CompleteRandomizationDesign(Design):
    def assignment_probability(self, state, structure, profile) -> float:
        return 0.5


@dataclass(frozen=True)
class DesignSpec:
    """Recipe for a fresh design; one is built per simulated trial."""

    kind: str
    weights: WeightConfig | None = None
    p_bias: float = 0.85
    block_size: int = 4

    KINDS = ("huhu", "pocock-simon", "stratified-block", "complete")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown design kind {self.kind!r}")
        if self.kind in ("huhu", "pocock-simon"):
            if self.weights is None:
                raise ValueError(f"{self.kind} design needs weights")
            _check_bias(self.p_bias)
        if self.kind == "pocock-simon" and (self.weights.w_overall or self.weights.w_stratum):
            raise ValueError("pocock-simon design takes margin weights only")
        if self.kind == "stratified-block":
            StratifiedPermutedBlockDesign(self.block_size)

    def check_structure(self, structure: CovariateStructure) -> None:
        if self.weights is not None:
            self.weights.check_structure(structure)

    def build(self) -> Design:
        if self.kind == "huhu":
            return HuHuDesign(self.weights, self.p_bias)
        if self.kind == "pocock-simon":
            return PocockSimonDesign(self.weights.w_margin, self.p_bias)
        if self.kind == "stratified-block":
            return StratifiedPermutedBlockDesign(self.block_size)
        return CompleteRandomizationDesign()

    @property
    def label(self) -> str:
        return {
            "huhu": "NEW",
            "pocock-simon": "PS",
            "stratified-block": "STR-PB",
            "complete": "CR",
        }[self.kind]
