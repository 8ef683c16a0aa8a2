import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covbal.core import CovariateStructure, ImbalanceState, WeightConfig, stratum_index
from covbal.designs import DesignSpec
from covbal.presets import PATIENT_PROBS, SITE_PROBS, multisite
from covbal.simulate import (
    CovariateDistribution,
    nearest_rank,
    replicate,
    replicate_checkpoints,
    replicate_stream,
    run_trial,
    sample_profile,
    summarize,
)

S22 = CovariateStructure((2, 2))
JOINT = CovariateDistribution.joint(S22, [0.1, 0.2, 0.3, 0.4])
NEW = DesignSpec("huhu", WeightConfig(0.3, 0.5, (0.1, 0.1)), 0.85)
PS = DesignSpec("pocock-simon", WeightConfig(0, 0, (0.5, 0.5)), 0.85)
STR = DesignSpec("stratified-block", block_size=4)
CR = DesignSpec("complete")


def test_sample_profile_joint_inversion():
    assert sample_profile(JOINT, S22, [0.05]) == (1, 1)
    assert sample_profile(JOINT, S22, [0.1]) == (1, 2)
    assert sample_profile(JOINT, S22, [0.65]) == (2, 2)
    assert sample_profile(JOINT, S22, [0.999999]) == (2, 2)


def test_sample_profile_independent_uniform():
    s = CovariateStructure((2,) * 10)
    dist = CovariateDistribution.independent_uniform(s)
    assert dist.draws_per_patient == 10
    assert sample_profile(dist, s, [0.3] * 10) == (1,) * 10
    assert sample_profile(dist, s, [0.7] + [0.3] * 9) == (2,) + (1,) * 9


def test_zero_probability_cells_never_sampled():
    dist = CovariateDistribution.joint(S22, [0.5, 0.5, 0.0, 0.0])
    for u in np.linspace(0, 1, 101)[:-1]:
        assert sample_profile(dist, S22, [u])[0] == 1


def test_multisite_product_probabilities():
    setting = multisite()
    probs = setting.dist.stratum_probabilities()
    s = setting.structure
    assert probs.sum() == pytest.approx(1.0)
    assert probs[stratum_index(s, (1, 1, 1, 1))] == pytest.approx(1 / 120 * 10 / 20)
    assert probs[stratum_index(s, (19, 2, 2, 2))] == pytest.approx(11 / 120 * 1 / 20)
    # male margin: first four cells of the gender x age x disease joint
    male = sum(probs[stratum_index(s, p)] for p in s.profile_table if p[1] == 1)
    assert male == pytest.approx(16 / 20)
    assert sum(SITE_PROBS) == pytest.approx(1) and sum(PATIENT_PROBS) == pytest.approx(1)


def test_empirical_sampling_matches_probabilities():
    setting = multisite()
    dist = setting.dist
    rng = np.random.default_rng(11)
    draws = rng.random((100_000, dist.draws_per_patient))
    counts = np.bincount([dist.stratum_from_draws(row) for row in draws.tolist()], minlength=160)
    expected = dist.stratum_probabilities()
    # chi-square style bound per cell
    sd = np.sqrt(expected * (1 - expected) / 100_000)
    assert np.all(np.abs(counts / 100_000 - expected) < 5 * sd + 1e-9)


def test_distribution_validation():
    with pytest.raises(ValueError):
        CovariateDistribution.joint(S22, [0.5, 0.5, 0.1, 0.0])
    with pytest.raises(ValueError):
        CovariateDistribution.joint(S22, [0.5, 0.5])


def test_run_trial_empty_and_single():
    res = run_trial(NEW.build(), S22, JOINT, 0, replicate_stream(0, 0))
    assert res.final_state.n_total == 0 and not res.final_state.d_by_stratum.any()
    for spec in (NEW, PS, STR, CR):
        res = run_trial(spec.build(), S22, JOINT, 1, replicate_stream(5, 3))
        assert abs(res.final_state.overall) == 1


@pytest.mark.parametrize("spec", [NEW, PS, STR, CR])
def test_trial_invariants_and_replay(spec):
    res = run_trial(spec.build(), S22, JOINT, 200, replicate_stream(1, 0), record=True, check_invariants=True)
    assert len(res.trajectory) == 200
    replayed = res.replay()
    assert np.array_equal(replayed.d_by_stratum, res.final_state.d_by_stratum)
    assert np.array_equal(replayed.n_by_stratum, res.final_state.n_by_stratum)


def test_step_path_agrees_with_public_api():
    # the fast per-step path must agree with assignment_probability/next_assignment
    from covbal.core import apply_assignment

    for spec in (NEW, PS, STR):
        res = run_trial(spec.build(), S22, JOINT, 300, replicate_stream(9, 1), record=True)
        design = spec.build()
        state = ImbalanceState.zeros(S22)
        draws = replicate_stream(9, 1).random((300, 2))
        for (t, arm, r), (u_prof, u_coin) in zip(res.trajectory, draws):
            profile = sample_profile(JOINT, S22, [u_prof])
            assert stratum_index(S22, profile) == r
            got = design.next_assignment(state, S22, profile, u_coin)
            assert int(got) == arm
            apply_assignment(state, S22, profile, got)


def test_block_design_bound_every_step():
    s = CovariateStructure((2, 3))
    dist = CovariateDistribution.independent_uniform(s)
    for i in range(50):
        res = run_trial(DesignSpec("stratified-block", block_size=6).build(), s, dist, 100, replicate_stream(2, i))
        assert res.max_abs_stratum <= 3


def test_replicate_is_deterministic():
    a = replicate(NEW, S22, JOINT, 100, 40, master_seed=123)
    b = replicate(NEW, S22, JOINT, 100, 40, master_seed=123)
    c = replicate(NEW, S22, JOINT, 100, 40, master_seed=124)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())
    assert json.dumps(a.to_json()) != json.dumps(c.to_json())


def test_serial_and_parallel_agree():
    a = replicate(PS, S22, JOINT, 80, 30, master_seed=5, threads=1)
    b = replicate(PS, S22, JOINT, 80, 30, master_seed=5, threads=3)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())


def test_checkpoints_match_separate_runs_prefix():
    reps = replicate_checkpoints(NEW, JOINT, [50, 100], 20, master_seed=8)
    assert reps[100].n_patients == 100 and reps[50].n_patients == 50
    # the n=100 checkpoint is the same thing as a plain 100-patient replication
    full = replicate(NEW, S22, JOINT, 100, 20, master_seed=8)
    assert json.dumps(reps[100].to_json()) == json.dumps(full.to_json())
    res = run_trial(NEW.build(), S22, JOINT, 100, replicate_stream(8, 0), checkpoints=[50])
    assert res.snapshots[50].n_total == 50


def test_nearest_rank():
    vals = np.arange(1, 101)
    assert nearest_rank(vals, 0.5) == 50
    assert nearest_rank(vals, 0.95) == 95
    assert nearest_rank([0, 0, 0, 5], 0.5) == 0
    assert nearest_rank([3], 0.95) == 3


def test_summarize_hand_example():
    s = CovariateStructure((2, 2))
    d = np.array([[2, 0, -1, 1], [0, 1, 1, 0]])
    n = np.array([[2, 2, 3, 1], [4, 1, 3, 0]])
    rep = summarize(s, d, n)
    assert rep.overall_mean_abs == pytest.approx((2 + 2) / 2)
    assert rep.conditional["2"]["strata"] == 2
    assert rep.conditional["2"]["mean_abs"] == pytest.approx(1.0)
    assert rep.conditional["2"]["distribution"] == {"0": 0.5, "2": 0.5}
    assert rep.conditional["3"]["distribution"] == {"1": 1.0, "3": 0.0}
    assert rep.occupancy_count["0"] == pytest.approx(0.5)
    assert rep.occupancy_count[">=4"] == pytest.approx(0.5)
    # margin (1;1) is strata (1,1) and (1,2)
    assert rep.margin_mean_abs[0][0] == pytest.approx((2 + 1) / 2)
    assert rep.marginal_mean_abs == pytest.approx(np.mean([2, 0, 1, 1, 1, 1, 1, 1]))


@pytest.mark.parametrize("spec", [NEW, PS, STR])
def test_signed_means_are_centred(spec):
    n_rep = 400
    rep = replicate(spec, S22, JOINT, 200, n_rep, master_seed=77)
    bound = lambda sd: 4 * sd / np.sqrt(n_rep) + 1e-12  # noqa: E731
    for mean, sd in zip(rep.stratum_mean, rep.stratum_std):
        assert abs(mean) < bound(sd)
    for means, sds in zip(rep.margin_mean, rep.margin_std):
        for mean, sd in zip(means, sds):
            assert abs(mean) < bound(sd)
    assert abs(rep.overall_mean) < bound(rep.overall_std)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from([NEW, PS, STR, CR]))
def test_random_trials_keep_invariants(seed, spec):
    s = CovariateStructure((2, 3))
    dist = CovariateDistribution.independent_uniform(s)
    res = run_trial(spec.build(), s, dist, 60, replicate_stream(seed, 0), check_invariants=True)
    assert res.final_state.n_total == 60
