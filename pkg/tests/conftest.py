import numpy as np
import pytest
from hypothesis import strategies as st

from covbal.core import CovariateStructure, ImbalanceState, WeightConfig

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record an acceptance criterion outcome for the end-of-run summary."""

    def record(label, ok, detail=""):
        _CRITERIA.append((label, bool(ok), detail))
        assert ok, f"{label}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")


@st.composite
def structures(draw, max_covariates=3, max_levels=4):
    levels = draw(st.lists(st.integers(2, max_levels), min_size=1, max_size=max_covariates))
    return CovariateStructure(tuple(levels))


@st.composite
def weight_configs(draw, n_margins):
    raw = draw(
        st.lists(st.floats(0, 1, allow_nan=False), min_size=n_margins + 2, max_size=n_margins + 2)
        .filter(lambda xs: sum(xs) > 1e-3)
    )
    return WeightConfig.normalized(raw[0], raw[1], raw[2:])


@st.composite
def states(draw, structure, max_abs=6):
    m = structure.stratum_count()
    d = draw(st.lists(st.integers(-max_abs, max_abs), min_size=m, max_size=m))
    extra = draw(st.lists(st.integers(0, 3), min_size=m, max_size=m))
    n = [abs(x) + 2 * e for x, e in zip(d, extra)]
    return ImbalanceState.from_counts(structure, d, n)


@st.composite
def structure_weights_state(draw):
    s = draw(structures())
    w = draw(weight_configs(s.num_covariates))
    state = draw(states(s))
    profile = draw(st.sampled_from(s.profile_table))
    return s, w, state, profile


@pytest.fixture
def example_2x2():
    """Fifty patients in, differences -2, +2, +1, -1; weights 1/3, 1/6, 1/6, 1/3."""
    s = CovariateStructure((2, 2))
    w = WeightConfig(1 / 3, 1 / 3, (1 / 6, 1 / 6))
    n = np.array([14, 12, 11, 13])
    state = ImbalanceState.from_counts(s, [-2, 2, 1, -1], n)
    return s, w, state
