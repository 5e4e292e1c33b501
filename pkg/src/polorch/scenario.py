"""JSON scenario files: matching model, experts, learning, estimation and reporting.

A scenario is validated against :data:`SCHEMA` (unknown keys are rejected),
then completed with defaults.  :func:`dumps` and :func:`loads` round-trip the
completed form.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import jsonschema
import numpy as np

from .estimation import EstimationConfig, horizon_for_epsilon
from .matching import EXPERT_KINDS, MATCH_SEMANTICS, MatchingConfig, random_scenario
from .adversarial import ALIASES

STRATEGIES = tuple(ALIASES)

_num = {"type": "number"}
_int = {"type": "integer"}
_nullable_num = {"type": ["number", "null"]}

_strategy_params = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "p": _nullable_num,
        "eta": _nullable_num,
        "eta_scale": _nullable_num,
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["matching"],
    "properties": {
        "name": {"type": "string"},
        "matching": {
            "type": "object",
            "additionalProperties": False,
            "required": ["num_classes", "max_queue", "holding_coeff", "discount", "arrival_probs", "edges"],
            "properties": {
                "num_classes": {"type": "integer", "minimum": 1},
                "max_queue": {"type": "integer", "minimum": 1},
                "holding_coeff": {"type": "number", "minimum": 0},
                "discount": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "arrival_probs": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "edges": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "prefixItems": [_int, _int, _num],
                        "minItems": 3,
                        "maxItems": 3,
                    },
                },
                "forced_match": {"type": "boolean"},
                "match_semantics": {"enum": list(MATCH_SEMANTICS)},
                "max_states": {"type": "integer", "minimum": 1},
            },
        },
        "experts": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kinds": {"type": "array", "items": {"enum": list(EXPERT_KINDS)}, "minItems": 1},
                "sigma_seed": _int,
                "sigma": {"type": ["array", "null"], "items": _int},
            },
        },
        "learning": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "strategy": {"enum": list(STRATEGIES)},
                "params": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: _strategy_params for k in STRATEGIES},
                },
                "T": {"type": "integer", "minimum": 1},
                "N": {"type": "integer", "minimum": 1},
                "root_seed": {"type": "integer", "minimum": 0},
                "gain_bound": _nullable_num,
            },
        },
        "estimation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "reward_scale_bias": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "horizon": {"type": ["integer", "null"], "minimum": 1},
                "kappa": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "mode": {"enum": ["masked", "lazy"]},
                "repeats": {"type": "integer", "minimum": 1},
            },
        },
        "reporting": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mu0": {"enum": ["empty_queues"]},
                "output_dir": {"type": "string"},
                "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
    },
}

DEFAULTS = {
    "name": "scenario",
    "matching": {"forced_match": True, "match_semantics": "remove", "max_states": 200_000},
    "experts": {"kinds": list(EXPERT_KINDS[:3]), "sigma_seed": 0, "sigma": None},
    "learning": {
        "strategy": "poly",
        "params": {k: {} for k in STRATEGIES},
        "T": 2500,
        "N": 20,
        "root_seed": 0,
        "gain_bound": None,
    },
    "estimation": {
        "epsilon": None,
        "reward_scale_bias": None,
        "horizon": None,
        "kappa": 0.1,
        "mode": "masked",
        "repeats": 1,
    },
    "reporting": {"mu0": "empty_queues", "output_dir": "runs", "delta": 0.05},
}


class ScenarioError(ValueError):
    pass


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def validate(doc: dict) -> dict:
    """Schema-check ``doc`` and return it completed with defaults."""
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{path}: {exc.message}") from None
    full = _merge(DEFAULTS, doc)
    try:
        jsonschema.validate(full, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ScenarioError(exc.message) from None
    return full


@dataclass
class Scenario:
    doc: dict

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        scen = cls(validate(doc))
        scen.matching_config()  # semantic checks
        scen.estimation_config()
        return scen

    def __eq__(self, other):
        return isinstance(other, Scenario) and self.doc == other.doc

    @property
    def name(self) -> str:
        return self.doc["name"]

    def section(self, key: str) -> dict:
        return self.doc[key]

    def matching_config(self) -> MatchingConfig:
        m = self.doc["matching"]
        e = self.doc["experts"]
        try:
            return MatchingConfig(
                num_classes=m["num_classes"],
                max_queue=m["max_queue"],
                holding_coeff=m["holding_coeff"],
                discount=m["discount"],
                arrival_probs=np.array(m["arrival_probs"], dtype=float),
                edges={(int(a), int(b)): float(g) for a, b, g in m["edges"]},
                sigma=None if e["sigma"] is None else np.array(e["sigma"]),
                seed=e["sigma_seed"],
                forced_match=m["forced_match"],
                match_semantics=m["match_semantics"],
            )
        except ValueError as exc:
            raise ScenarioError(f"matching: {exc}") from None

    def reward_max(self) -> float:
        return self.matching_config().reward_max

    def estimation_config(self) -> EstimationConfig:
        """Resolve ``epsilon`` and the horizon from whichever of them is given.

        ``reward_scale_bias`` is ``reward_max * epsilon``.  With nothing given,
        the horizon defaults to the one for a reward-scale bias of 0.005.
        """
        est = self.doc["estimation"]
        gamma = self.doc["matching"]["discount"]
        eps = est["epsilon"]
        if est["reward_scale_bias"] is not None:
            scaled = est["reward_scale_bias"] / self.reward_max()
            if eps is not None and abs(scaled - eps) > 1e-12 * eps:
                raise ScenarioError("estimation: epsilon and reward_scale_bias disagree")
            eps = scaled
        H = est["horizon"]
        if eps is None and H is None:
            eps = 0.005 / self.reward_max()
        if H is None:
            H = horizon_for_epsilon(gamma, eps)
        elif eps is None:
            eps = gamma**H / (1.0 - gamma)
        try:
            return EstimationConfig(eps, H, est["kappa"], est["mode"], est["repeats"]).check(gamma)
        except ValueError as exc:
            raise ScenarioError(f"estimation: {exc}") from None

    def strategy_params(self, strategy: str | None = None) -> tuple[str, dict]:
        learn = self.doc["learning"]
        strategy = strategy or learn["strategy"]
        if strategy not in STRATEGIES:
            raise ScenarioError(f"unknown strategy {strategy!r}")
        params = {k: v for k, v in learn["params"].get(strategy, {}).items() if v is not None}
        if strategy == "exp-fixed" and "eta" not in params:
            raise ScenarioError("learning.params.exp-fixed.eta is required for the exp-fixed strategy")
        return strategy, params


def dumps(scenario: Scenario) -> str:
    return json.dumps(scenario.doc, indent=2, sort_keys=True) + "\n"


def loads(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc}") from None
    return Scenario.from_dict(doc)


def load(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``section.key=value`` overrides; values are parsed as JSON when possible."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ScenarioError(f"override {item!r} is not of the form path=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        keys = path.split(".")
        node = doc
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ScenarioError(f"override path {path!r} crosses a non-object")
        node[keys[-1]] = value
    return doc


def config_to_matching_section(cfg: MatchingConfig) -> dict:
    edges = [
        [a, b, float(cfg.payoff[a, b])]
        for a in range(cfg.num_classes)
        for b in range(a + 1, cfg.num_classes)
        if cfg.adjacency[a, b]
    ]
    return {
        "num_classes": cfg.num_classes,
        "max_queue": cfg.max_queue,
        "holding_coeff": float(cfg.holding_coeff),
        "discount": float(cfg.discount),
        "arrival_probs": [float(x) for x in cfg.arrival_probs],
        "edges": edges,
        "forced_match": cfg.forced_match,
        "match_semantics": cfg.match_semantics,
    }


def scenario_one_doc() -> dict:
    """Four-class scenario with the reference learning constants."""
    from .matching import scenario_one

    return {
        "name": "scenario1",
        "matching": config_to_matching_section(scenario_one()),
        "experts": {"kinds": list(EXPERT_KINDS[:3]), "sigma_seed": 0},
        "learning": {
            "strategy": "poly",
            "params": {
                "poly": {"p": 3},
                "exp-fixed": {"eta": 0.00014},
                "exp-tv": {"eta_scale": 0.005},
                "greedy": {"eta_scale": 0.004},
            },
            "T": 2500,
            "N": 20,
            "root_seed": 1,
        },
        "estimation": {"horizon": 55, "kappa": 0.1, "mode": "masked"},
        "reporting": {"output_dir": "runs/scenario1", "delta": 0.05},
    }


def generated_doc(seed: int, **kwargs) -> dict:
    """Random eight-class scenario with the reference lazy-mode constants."""
    cfg = random_scenario(seed, **kwargs)
    return {
        "name": f"generated-{seed}",
        "matching": config_to_matching_section(cfg),
        "experts": {"kinds": list(EXPERT_KINDS), "sigma_seed": seed},
        "learning": {
            "strategy": "poly",
            "params": {
                "poly": {"p": 5},
                "exp-fixed": {"eta": 0.014},
                "exp-tv": {"eta_scale": 0.8},
            },
            "T": 2500,
            "N": 5,
            "root_seed": seed,
        },
        "estimation": {"horizon": 45, "kappa": 1.0, "mode": "lazy"},
        "reporting": {"output_dir": f"runs/generated-{seed}", "delta": 0.05},
    }
