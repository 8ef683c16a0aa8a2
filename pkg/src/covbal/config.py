"""Experiment config files and the JSON schemas for configs and reports."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from covbal.core import CovariateStructure, WeightConfig, WeightError
from covbal.designs import DesignSpec
from covbal.simulate import CovariateDistribution

_prob_list = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "covbal experiment config",
    "type": "object",
    "required": ["structure", "design"],
    "additionalProperties": False,
    "properties": {
        "structure": {
            "type": "object",
            "required": ["levels"],
            "additionalProperties": False,
            "properties": {
                "levels": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 2},
                    "minItems": 1,
                }
            },
        },
        "distribution": {
            "oneOf": [
                {
                    "type": "object",
                    "required": ["kind", "probs"],
                    "additionalProperties": False,
                    "properties": {"kind": {"const": "joint"}, "probs": _prob_list},
                },
                {
                    "type": "object",
                    "required": ["kind"],
                    "additionalProperties": False,
                    "properties": {"kind": {"const": "independent-uniform"}},
                },
                {
                    "type": "object",
                    "required": ["kind", "first", "rest"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"const": "product"},
                        "first": _prob_list,
                        "rest": _prob_list,
                    },
                },
            ]
        },
        "design": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": list(DesignSpec.KINDS)},
                "weights": {
                    "type": "object",
                    "required": ["overall", "stratum", "margin"],
                    "additionalProperties": False,
                    "properties": {
                        "overall": {"type": "number", "minimum": 0},
                        "stratum": {"type": "number", "minimum": 0},
                        "margin": {"type": "array", "items": {"type": "number", "minimum": 0}},
                    },
                },
                "margin_weights": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "p_bias": {"type": "number", "minimum": 0.5, "exclusiveMaximum": 1},
                "block_size": {"type": "integer", "minimum": 2, "multipleOf": 2},
            },
        },
        "run": {
            "type": "object",
            "required": ["n_patients", "n_replicates"],
            "additionalProperties": False,
            "properties": {
                "n_patients": {"type": "integer", "minimum": 0},
                "n_replicates": {"type": "integer", "minimum": 1},
                "master_seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
                "checkpoints": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "format": {"enum": ["csv", "json", "both"]},
            },
        },
    },
}

_num_list = {"type": "array", "items": {"type": "number"}}
_conditional = {
    "type": "object",
    "required": ["strata", "mean_abs", "distribution"],
    "properties": {
        "strata": {"type": "integer", "minimum": 0},
        "mean_abs": {"type": "number"},
        "distribution": {"type": "object", "additionalProperties": {"type": "number"}},
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "covbal replication report",
    "type": "object",
    "required": [
        "levels", "n_patients", "n_replicates",
        "stratum_mean", "stratum_std", "stratum_mean_abs",
        "margin_mean", "margin_std", "margin_mean_abs",
        "overall_mean", "overall_std", "overall_mean_abs",
        "overall_abs_median", "overall_abs_q95", "marginal_mean_abs",
        "conditional", "occupancy_share", "occupancy_count", "max_abs_stratum",
    ],
    "additionalProperties": False,
    "properties": {
        "levels": {"type": "array", "items": {"type": "integer", "minimum": 2}},
        "n_patients": {"type": "integer", "minimum": 0},
        "n_replicates": {"type": "integer", "minimum": 1},
        "stratum_mean": _num_list,
        "stratum_std": _num_list,
        "stratum_mean_abs": _num_list,
        "margin_mean": {"type": "array", "items": _num_list},
        "margin_std": {"type": "array", "items": _num_list},
        "margin_mean_abs": {"type": "array", "items": _num_list},
        "overall_mean": {"type": "number"},
        "overall_std": {"type": "number"},
        "overall_mean_abs": {"type": "number"},
        "overall_abs_median": {"type": "number"},
        "overall_abs_q95": {"type": "number"},
        "marginal_mean_abs": {"type": "number"},
        "conditional": {"type": "object", "additionalProperties": _conditional},
        "occupancy_share": {"type": "object", "additionalProperties": {"type": "number"}},
        "occupancy_count": {"type": "object", "additionalProperties": {"type": "number"}},
        "max_abs_stratum": {"type": "integer", "minimum": 0},
    },
}

CONDITION_REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "covbal condition report",
    "type": "object",
    "required": ["condition_a", "u_star", "condition_c", "condition_b", "condition_b_prime", "recurrence_guaranteed"],
    "properties": {
        "condition_a": {"type": "boolean"},
        "u_star": {"type": "number"},
        "condition_c": {"type": "boolean"},
        "condition_b": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["x", "l1_norm", "satisfied"],
                    "properties": {
                        "x": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                        "l1_norm": {"type": "number"},
                        "satisfied": {"type": "boolean"},
                    },
                },
            ]
        },
        "condition_b_prime": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["c_of_wo", "satisfied"],
                    "properties": {"c_of_wo": {"type": "number"}, "satisfied": {"type": "boolean"}},
                },
            ]
        },
        "recurrence_guaranteed": {"type": "boolean"},
    },
}


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class RunSettings:
    n_patients: int
    n_replicates: int
    master_seed: int = 0
    checkpoints: tuple[int, ...] = ()
    format: str = "csv"


@dataclass(frozen=True)
class ExperimentConfig:
    structure: CovariateStructure
    design: DesignSpec
    distribution: CovariateDistribution | None = None
    run: RunSettings | None = None
    p_bias: float = 0.85

    @property
    def weights(self) -> WeightConfig:
        if self.design.weights is None:
            raise ConfigError("design.weights", f"{self.design.kind} design has no weights")
        return self.design.weights


def _field_path(error: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in error.absolute_path) or "<root>"


def parse_config(raw: dict, *, allow_fair_coin: bool = False) -> ExperimentConfig:
    """Validate a decoded config and build the domain objects.

    ``allow_fair_coin`` admits p_bias = 0.5, which only the drift diagnostic uses.
    """
    errors = sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(_field_path(e), e.message)

    try:
        structure = CovariateStructure(tuple(raw["structure"]["levels"]))
    except ValueError as exc:
        raise ConfigError("structure.levels", str(exc)) from None

    d = raw["design"]
    weights = None
    try:
        if "weights" in d:
            w = d["weights"]
            weights = WeightConfig(w["overall"], w["stratum"], tuple(w["margin"]))
        elif "margin_weights" in d:
            weights = WeightConfig(0.0, 0.0, tuple(d["margin_weights"]))
    except WeightError as exc:
        name = "margin_weights" if "margin_weights" in d else "weights"
        sub = exc.field if exc.field != "weights" else ""
        raise ConfigError(f"design.{name}" + (f".{sub}" if sub else ""), str(exc)) from None
    if weights is not None and len(weights.w_margin) != structure.num_covariates:
        raise ConfigError(
            "design.weights.margin",
            f"{len(weights.w_margin)} margin weights for {structure.num_covariates} covariates",
        )
    p_bias = d.get("p_bias", 0.85)
    kind = d["kind"]
    if allow_fair_coin and p_bias == 0.5 and kind == "huhu":
        # a fair coin ignores the imbalance entirely
        design = DesignSpec("complete", weights, p_bias)
    else:
        try:
            design = DesignSpec(kind, weights, p_bias, d.get("block_size", 4))
        except ValueError as exc:
            raise ConfigError("design", str(exc)) from None

    dist = None
    if "distribution" in raw:
        dr = raw["distribution"]
        try:
            if dr["kind"] == "joint":
                dist = CovariateDistribution.joint(structure, dr["probs"])
            elif dr["kind"] == "independent-uniform":
                dist = CovariateDistribution.independent_uniform(structure)
            else:
                dist = CovariateDistribution.product(structure, dr["first"], dr["rest"])
        except ValueError as exc:
            raise ConfigError("distribution", str(exc)) from None

    run = None
    if "run" in raw:
        r = raw["run"]
        run = RunSettings(
            r["n_patients"],
            r["n_replicates"],
            r.get("master_seed", 0),
            tuple(r.get("checkpoints", ())),
            r.get("format", "csv"),
        )
    return ExperimentConfig(structure, design, dist, run, p_bias)


def load_config(path: str | Path, **kwargs) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return parse_config(raw, **kwargs)
