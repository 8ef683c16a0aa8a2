"""Patient streams, trial runs, and replicated imbalance statistics."""
from __future__ import annotations

import math
from bisect import bisect_right
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from covbal.core import CovariateStructure, ImbalanceState, _apply
from covbal.designs import Design, DesignSpec

PROB_SUM_TOL = 1e-9
OCCUPANCY_BINS = ("0", "1", "2", "3", ">=4")
CONDITIONAL_OCCUPANCIES = (2, 3)


@dataclass(frozen=True)
class FactorBlock:
    """Joint distribution over a group of covariates, row-major over their levels."""

    covariates: tuple[int, ...]
    probs: tuple[float, ...]


@dataclass(frozen=True)
class CovariateDistribution:
    """Independent factor blocks that together cover every covariate once.

    One uniform draw is consumed per block. ``joint`` is a single block,
    ``independent_uniform`` one block per covariate, and ``product`` a
    block for one covariate times a block for the rest.
    """

    structure: CovariateStructure
    blocks: tuple[FactorBlock, ...]
    kind: str = "product"
    _lookup: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        covered = sorted(c for b in self.blocks for c in b.covariates)
        if covered != list(range(self.structure.num_covariates)):
            raise ValueError(f"factor blocks must cover each covariate once, got {covered}")
        lookup = []
        for b in self.blocks:
            sizes = [self.structure.levels[c] for c in b.covariates]
            probs = np.asarray(b.probs, dtype=float)
            if probs.shape != (math.prod(sizes),):
                raise ValueError(
                    f"block over covariates {b.covariates} needs {math.prod(sizes)} "
                    f"probabilities, got {probs.size}"
                )
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROB_SUM_TOL:
                raise ValueError(f"probabilities for covariates {b.covariates} must be >= 0 and sum to 1")
            cum = np.cumsum(probs)
            cum[-1] = 1.0
            offsets = []
            for idx in np.ndindex(*sizes):
                offsets.append(
                    sum(k * self.structure.strides[c] for k, c in zip(idx, b.covariates))
                )
            # a draw past the last positive cell must not land on a trailing zero cell
            last = int(np.flatnonzero(probs)[-1])
            lookup.append((cum.tolist(), offsets, last))
        object.__setattr__(self, "_lookup", tuple(lookup))

    @classmethod
    def joint(cls, structure: CovariateStructure, probs: Sequence[float]):
        return cls(structure, (FactorBlock(tuple(range(structure.num_covariates)), tuple(probs)),), "joint")

    @classmethod
    def independent_uniform(cls, structure: CovariateStructure):
        blocks = tuple(FactorBlock((i,), (1.0 / m,) * m) for i, m in enumerate(structure.levels))
        return cls(structure, blocks, "independent-uniform")

    @classmethod
    def product(
        cls,
        structure: CovariateStructure,
        first_probs: Sequence[float],
        rest_probs: Sequence[float],
    ):
        """First covariate's marginal times the joint of the remaining covariates."""
        rest = tuple(range(1, structure.num_covariates))
        return cls(structure, (FactorBlock((0,), tuple(first_probs)), FactorBlock(rest, tuple(rest_probs))), "product")

    @property
    def draws_per_patient(self) -> int:
        return len(self.blocks)

    def stratum_probabilities(self) -> np.ndarray:
        out = np.zeros(self.structure.stratum_count())
        out[0] = 1.0
        for b, (_, offsets, _) in zip(self.blocks, self._lookup):
            nxt = np.zeros_like(out)
            for p, off in zip(b.probs, offsets):
                if p:
                    nxt += p * np.roll(out, off)
            out = nxt
        return out

    def stratum_from_draws(self, draws: Sequence[float]) -> int:
        r = 0
        for (cum, offsets, last), u in zip(self._lookup, draws):
            r += offsets[min(bisect_right(cum, u), last)]
        return r


def sample_profile(
    dist: CovariateDistribution, structure: CovariateStructure, uniform_draws: Sequence[float]
) -> tuple[int, ...]:
    if len(uniform_draws) < dist.draws_per_patient:
        raise ValueError(f"need {dist.draws_per_patient} uniform draws")
    return structure.profile_table[dist.stratum_from_draws(uniform_draws)]


@dataclass
class TrialResult:
    final_state: ImbalanceState
    trajectory: list[tuple[int, int, int]] | None = None
    snapshots: dict[int, ImbalanceState] = field(default_factory=dict)
    max_abs_stratum: int = 0

    def replay(self) -> ImbalanceState:
        state = ImbalanceState.zeros(self.final_state.structure)
        table = state.structure.profile_table
        for _, arm, r in self.trajectory:
            _apply(state, r, table[r], 1 if arm == 1 else -1)
        return state


def run_trial(
    design: Design,
    structure: CovariateStructure,
    dist: CovariateDistribution,
    n_patients: int,
    rng: np.random.Generator,
    *,
    record: bool = False,
    checkpoints: Sequence[int] = (),
    check_invariants: bool = False,
) -> TrialResult:
    """Enroll ``n_patients`` sequentially.

    Per patient the stream yields the profile draws first, then the coin draw.
    """
    state = ImbalanceState.zeros(structure)
    k = dist.draws_per_patient
    table = structure.profile_table
    to_stratum = dist.stratum_from_draws
    d = state.d_by_stratum
    wanted = set(checkpoints)
    result = TrialResult(state, [] if record else None)
    peak = 0
    draws = rng.random((n_patients, k + 1)).tolist() if n_patients else []
    for t, row in enumerate(draws, 1):
        r = to_stratum(row)
        arm = design.step(state, table[r], r, row[k])
        a = abs(int(d[r]))
        if a > peak:
            peak = a
        if record:
            result.trajectory.append((t, int(arm), r))
        if check_invariants:
            state.check_invariants()
        if t in wanted:
            result.snapshots[t] = state.copy()
    result.max_abs_stratum = peak
    return result


def replicate_stream(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index,)))


@dataclass(frozen=True)
class _Job:
    design_spec: DesignSpec
    dist: CovariateDistribution
    checkpoints: tuple[int, ...]
    master_seed: int


def _run_chunk(job: _Job, indices: range):
    structure = job.dist.structure
    m = structure.stratum_count()
    n_max = max(job.checkpoints)
    d = np.zeros((len(job.checkpoints), len(indices), m), dtype=np.int64)
    n = np.zeros_like(d)
    peaks = np.zeros(len(indices), dtype=np.int64)
    for j, i in enumerate(indices):
        res = run_trial(
            job.design_spec.build(),
            structure,
            job.dist,
            n_max,
            replicate_stream(job.master_seed, i),
            checkpoints=job.checkpoints,
        )
        res.snapshots[n_max] = res.final_state
        for c, cp in enumerate(job.checkpoints):
            d[c, j] = res.snapshots[cp].d_by_stratum
            n[c, j] = res.snapshots[cp].n_by_stratum
        peaks[j] = res.max_abs_stratum
    return d, n, peaks


def simulate_states(
    design_spec: DesignSpec,
    dist: CovariateDistribution,
    checkpoints: Sequence[int],
    n_replicates: int,
    master_seed: int,
    threads: int = 1,
):
    """Final per-stratum differences and counts of every replicate.

    Returns ``(d, n, peaks)`` with ``d`` and ``n`` shaped
    (checkpoint, replicate, stratum). Output does not depend on ``threads``.
    """
    if n_replicates < 1:
        raise ValueError("n_replicates must be >= 1")
    checkpoints = tuple(sorted(set(int(c) for c in checkpoints)))
    if not checkpoints or checkpoints[0] < 0:
        raise ValueError("need nonnegative patient counts")
    design_spec.check_structure(dist.structure)
    job = _Job(design_spec, dist, checkpoints, int(master_seed))
    if threads <= 1 or n_replicates < 2:
        parts = [_run_chunk(job, range(n_replicates))]
    else:
        bounds = np.linspace(0, n_replicates, min(threads, n_replicates) + 1).astype(int)
        chunks = [range(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(_run_chunk, [job] * len(chunks), chunks))
    d = np.concatenate([p[0] for p in parts], axis=1)
    n = np.concatenate([p[1] for p in parts], axis=1)
    peaks = np.concatenate([p[2] for p in parts])
    return checkpoints, d, n, peaks


def nearest_rank(values: np.ndarray, q: float) -> float:
    """Smallest value with at least a fraction ``q`` of the sample at or below it."""
    ordered = np.sort(np.asarray(values))
    rank = max(1, math.ceil(q * len(ordered)))
    return float(ordered[rank - 1])


@dataclass
class ReplicationReport:
    levels: list[int]
    n_patients: int
    n_replicates: int
    stratum_mean: list[float]
    stratum_std: list[float]
    stratum_mean_abs: list[float]
    margin_mean: list[list[float]]
    margin_std: list[list[float]]
    margin_mean_abs: list[list[float]]
    overall_mean: float
    overall_std: float
    overall_mean_abs: float
    overall_abs_median: float
    overall_abs_q95: float
    marginal_mean_abs: float
    conditional: dict[str, dict]
    occupancy_share: dict[str, float]
    occupancy_count: dict[str, float]
    max_abs_stratum: int

    def to_json(self) -> dict:
        return asdict(self)

    def rows(self) -> list[tuple[str, str, str, float]]:
        """Long-format rows (level, identifier, statistic, value)."""
        structure = CovariateStructure(tuple(self.levels))
        out = []
        for r, prof in enumerate(structure.profile_table):
            ident = "(" + ",".join(map(str, prof)) + ")"
            out += [
                ("stratum", ident, "mean", self.stratum_mean[r]),
                ("stratum", ident, "std", self.stratum_std[r]),
                ("stratum", ident, "mean_abs", self.stratum_mean_abs[r]),
            ]
        for i, per in enumerate(self.margin_std):
            for k in range(len(per)):
                ident = f"({i + 1};{k + 1})"
                out += [
                    ("margin", ident, "mean", self.margin_mean[i][k]),
                    ("margin", ident, "std", self.margin_std[i][k]),
                    ("margin", ident, "mean_abs", self.margin_mean_abs[i][k]),
                ]
        out += [
            ("margin", "all", "mean_abs", self.marginal_mean_abs),
            ("overall", "all", "mean", self.overall_mean),
            ("overall", "all", "std", self.overall_std),
            ("overall", "all", "mean_abs", self.overall_mean_abs),
            ("overall", "all", "abs_median", self.overall_abs_median),
            ("overall", "all", "abs_q95", self.overall_abs_q95),
            ("stratum", "all", "max_abs", float(self.max_abs_stratum)),
        ]
        for j, cond in self.conditional.items():
            ident = f"occupancy={j}"
            out.append(("conditional", ident, "strata", float(cond["strata"])))
            out.append(("conditional", ident, "mean_abs", cond["mean_abs"]))
            for value, prob in cond["distribution"].items():
                out.append(("conditional", ident, f"prob_abs={value}", prob))
        for b in OCCUPANCY_BINS:
            out.append(("occupancy", b, "share", self.occupancy_share[b]))
            out.append(("occupancy", b, "strata", self.occupancy_count[b]))
        return out


def summarize(
    structure: CovariateStructure,
    d: np.ndarray,
    n: np.ndarray,
    max_abs_stratum: int = 0,
) -> ReplicationReport:
    """Aggregate (replicate, stratum) arrays of differences and counts."""
    n_rep, m = d.shape
    grid = d.reshape((n_rep,) + structure.levels)
    I = structure.num_covariates
    margins = [
        grid.sum(axis=tuple(j + 1 for j in range(I) if j != i)) for i in range(I)
    ]
    overall = d.sum(axis=1)
    abs_overall = np.abs(overall)

    conditional = {}
    for j in CONDITIONAL_OCCUPANCIES:
        vals = np.abs(d[n == j])
        dist = {}
        for v in range(j % 2, j + 1, 2):
            dist[str(v)] = float(np.mean(vals == v)) if vals.size else float("nan")
        conditional[str(j)] = {
            "strata": int(vals.size),
            "mean_abs": float(vals.mean()) if vals.size else float("nan"),
            "distribution": dist,
        }

    binned = np.minimum(n, 4)
    counts = np.stack([(binned == b).sum(axis=1) for b in range(5)], axis=1)
    occ_count = {b: float(c) for b, c in zip(OCCUPANCY_BINS, counts.mean(axis=0))}
    occ_share = {b: c / m for b, c in occ_count.items()}

    all_margin_abs = np.concatenate([np.abs(mg) for mg in margins], axis=1)
    return ReplicationReport(
        levels=list(structure.levels),
        n_patients=int(n[0].sum()),
        n_replicates=n_rep,
        stratum_mean=d.mean(axis=0).tolist(),
        stratum_std=d.std(axis=0).tolist(),
        stratum_mean_abs=np.abs(d).mean(axis=0).tolist(),
        margin_mean=[mg.mean(axis=0).tolist() for mg in margins],
        margin_std=[mg.std(axis=0).tolist() for mg in margins],
        margin_mean_abs=[np.abs(mg).mean(axis=0).tolist() for mg in margins],
        overall_mean=float(overall.mean()),
        overall_std=float(overall.std()),
        overall_mean_abs=float(abs_overall.mean()),
        overall_abs_median=nearest_rank(abs_overall, 0.5),
        overall_abs_q95=nearest_rank(abs_overall, 0.95),
        marginal_mean_abs=float(all_margin_abs.mean()),
        conditional=conditional,
        occupancy_share=occ_share,
        occupancy_count=occ_count,
        max_abs_stratum=int(max_abs_stratum),
    )


def replicate_checkpoints(
    design_spec: DesignSpec,
    dist: CovariateDistribution,
    checkpoints: Sequence[int],
    n_replicates: int,
    master_seed: int,
    threads: int = 1,
) -> dict[int, ReplicationReport]:
    """One report per checkpoint, all read off the same simulated trials."""
    cps, d, n, peaks = simulate_states(design_spec, dist, checkpoints, n_replicates, master_seed, threads)
    peak = int(peaks.max())
    return {cp: summarize(dist.structure, d[c], n[c], peak) for c, cp in enumerate(cps)}


def replicate(
    design_spec: DesignSpec,
    structure: CovariateStructure,
    dist: CovariateDistribution,
    n_patients: int,
    n_replicates: int,
    master_seed: int,
    threads: int = 1,
) -> ReplicationReport:
    if dist.structure != structure:
        raise ValueError("distribution was built for a different structure")
    return replicate_checkpoints(design_spec, dist, [n_patients], n_replicates, master_seed, threads)[n_patients]
