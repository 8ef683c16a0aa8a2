"""Baked-in experiment settings and comparison against published values."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from covbal.core import CovariateStructure, WeightConfig, stratum_index
from covbal.designs import DesignSpec
from covbal.simulate import CovariateDistribution, ReplicationReport, replicate_checkpoints

P_BIAS = 0.85
BLOCK_SIZE = 4
TABLE_IDS = ("table4", "table5", "table8", "table9", "table10")


@dataclass(frozen=True)
class Setting:
    name: str
    dist: CovariateDistribution
    designs: dict[str, DesignSpec]
    sample_sizes: tuple[int, ...]

    @property
    def structure(self) -> CovariateStructure:
        return self.dist.structure


def two_by_two() -> Setting:
    s = CovariateStructure((2, 2))
    return Setting(
        "2x2",
        CovariateDistribution.joint(s, [0.1, 0.2, 0.3, 0.4]),
        {
            "STR-PB": DesignSpec("stratified-block", block_size=BLOCK_SIZE),
            "PS": DesignSpec("pocock-simon", WeightConfig(0.0, 0.0, (0.5, 0.5)), P_BIAS),
            "NEW": DesignSpec("huhu", WeightConfig(0.3, 0.5, (0.1, 0.1)), P_BIAS),
        },
        (200, 500, 1000),
    )


def ten_binary() -> Setting:
    s = CovariateStructure((2,) * 10)
    return Setting(
        "2^10",
        CovariateDistribution.independent_uniform(s),
        {
            "STR-PB": DesignSpec("stratified-block", block_size=BLOCK_SIZE),
            "PS": DesignSpec("pocock-simon", WeightConfig(0.0, 0.0, (0.1,) * 10), P_BIAS),
            "NEW": DesignSpec("huhu", WeightConfig(0.0, 0.5, (0.05,) * 10), P_BIAS),
        },
        (500,),
    )


SITE_PROBS = [1 / 120] * 2 + [6 / 120] * 16 + [11 / 120] * 2
# gender x age x disease, row-major: (male, <60, moderate) first, disease fastest
PATIENT_PROBS = [10 / 20, 2 / 20, 2 / 20, 2 / 20, 1 / 20, 1 / 20, 1 / 20, 1 / 20]


def multisite() -> Setting:
    """20 sites x gender x age x disease; site independent of the other three."""
    s = CovariateStructure((20, 2, 2, 2))
    return Setting(
        "multisite",
        CovariateDistribution.product(s, SITE_PROBS, PATIENT_PROBS),
        {
            "STR-PB": DesignSpec("stratified-block", block_size=BLOCK_SIZE),
            "PS": DesignSpec("pocock-simon", WeightConfig(0.0, 0.0, (0.25,) * 4), P_BIAS),
            "NEW": DesignSpec("huhu", WeightConfig(1 / 3, 1 / 3, (1 / 12,) * 4), P_BIAS),
        },
        (120,),
    )


SETTINGS = {
    "table4": two_by_two,
    "table5": ten_binary,
    "table8": multisite,
    "table9": multisite,
    "table10": multisite,
}
# occupancy of the multisite layout rides along with these runs
EXTRA_TABLES = {"table9": ("table7",), "table10": ("table7",)}


@lru_cache(maxsize=None)
def reference_values() -> dict[str, list[dict]]:
    text = resources.files("covbal").joinpath("data/reference_values.json").read_text()
    return json.loads(text)["tables"]


def lookup(report: ReplicationReport, statistic: str, identifier: str) -> float:
    """Read one statistic off a report using the identifiers of the reference file."""
    structure = CovariateStructure(tuple(report.levels))
    if statistic in ("stratum_std", "stratum_mean_abs", "stratum_mean"):
        profile = [int(k) for k in identifier.strip("()").split(",")]
        return getattr(report, statistic)[stratum_index(structure, profile)]
    if statistic in ("margin_std", "margin_mean_abs", "margin_mean"):
        m = re.fullmatch(r"\((\d+);(\d+)(?:-(\d+))?\)", identifier)
        if not m:
            raise KeyError(identifier)
        i, lo = int(m.group(1)), int(m.group(2))
        hi = int(m.group(3) or lo)
        return float(np.mean(getattr(report, statistic)[i - 1][lo - 1 : hi]))
    if statistic == "conditional_mean_abs":
        return report.conditional[identifier]["mean_abs"]
    if statistic == "conditional_prob":
        occ, value = identifier.split(":")
        return report.conditional[occ]["distribution"][value]
    if statistic in ("occupancy_share", "occupancy_count"):
        return getattr(report, statistic)[identifier]
    return float(getattr(report, statistic))


@dataclass(frozen=True)
class Comparison:
    table: str
    design: str
    n: int
    statistic: str
    identifier: str
    simulated: float
    reference: float
    cell: str

    @property
    def rel_dev(self) -> float:
        if self.reference == 0:
            return math.inf if self.simulated else 0.0
        return (self.simulated - self.reference) / abs(self.reference)


def run_setting(setting: Setting, seed: int, n_replicates: int, threads: int = 1):
    """Reports keyed by (design label, sample size)."""
    out = {}
    for label, spec in setting.designs.items():
        per_n = replicate_checkpoints(spec, setting.dist, setting.sample_sizes, n_replicates, seed, threads)
        for n, rep in per_n.items():
            out[label, n] = rep
    return out


def compare(table_id: str, reports: dict) -> list[Comparison]:
    rows = []
    for table in (table_id,) + EXTRA_TABLES.get(table_id, ()):
        for ref in reference_values()[table]:
            designs = list(dict.fromkeys(d for d, _ in reports)) if ref["design"] == "any" else [ref["design"]]
            # occupancy depends only on the covariate stream, shared by every design
            rep = reports[designs[0], ref["n"]]
            rows.append(
                Comparison(
                    table,
                    ref["design"],
                    ref["n"],
                    ref["statistic"],
                    ref["identifier"],
                    lookup(rep, ref["statistic"], ref["identifier"]),
                    ref["value"],
                    ref["cell"],
                )
            )
    return rows


def reproduce(table_id: str, seed: int = 20120501, n_replicates: int = 1000, threads: int = 1):
    if table_id not in SETTINGS:
        raise KeyError(f"unknown table id {table_id!r}; choose from {', '.join(TABLE_IDS)}")
    reports = run_setting(SETTINGS[table_id](), seed, n_replicates, threads)
    return compare(table_id, reports), reports
