"""JSON Schemas for every document the CLI reads or writes."""

_NUMBER_ARRAY = {"type": "array", "items": {"type": "number"}}
_SUBSET_KEY = "^[1-9][0-9]*(,[1-9][0-9]*)*$"

COVARIANCE = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "covariance",
    "type": "array",
    "minItems": 1,
    "items": {**_NUMBER_ARRAY, "minItems": 1},
}

COST_MODEL = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "cost_model",
    "type": "object",
    "required": ["k", "subsets", "costs", "budgets"],
    "additionalProperties": False,
    "properties": {
        "k": {"type": "integer", "minimum": 1},
        "subsets": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
        },
        "costs": {"type": "array", "items": _NUMBER_ARRAY},
        "budgets": {**_NUMBER_ARRAY, "minItems": 1},
    },
}

_COUNTS = {"type": "object", "propertyNames": {"pattern": _SUBSET_KEY}}

ALLOCATION_PLAN = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "allocation_plan",
    "type": "object",
    "required": [
        "fractional",
        "rounded",
        "weights",
        "predicted_variance_fractional",
        "predicted_variance_rounded",
        "spend",
        "diagnostics",
    ],
    "additionalProperties": False,
    "properties": {
        "fractional": {**_COUNTS, "additionalProperties": {"type": "number", "minimum": 0}},
        "rounded": {**_COUNTS, "additionalProperties": {"type": "integer", "minimum": 0}},
        "weights": {**_COUNTS, "additionalProperties": _NUMBER_ARRAY},
        "predicted_variance_fractional": {"type": "number", "minimum": 0},
        "predicted_variance_rounded": {"type": "number", "minimum": 0},
        "spend": _NUMBER_ARRAY,
        "diagnostics": {"type": "object"},
        "dual": {"type": "object"},
    },
}

ESTIMATE_REPORT = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "estimate_report",
    "type": "object",
    "required": ["method", "point", "variance", "alpha", "interval", "per_subset", "allocation", "spend"],
    "additionalProperties": False,
    "properties": {
        "method": {"type": "string"},
        "point": {"type": "number"},
        "variance": {"type": "number", "minimum": 0},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "interval": {**_NUMBER_ARRAY, "minItems": 2, "maxItems": 2},
        "per_subset": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["subset", "n", "mean", "var"],
                "additionalProperties": False,
                "properties": {
                    "subset": {"type": "string", "pattern": _SUBSET_KEY},
                    "n": {"type": "integer", "minimum": 1},
                    "mean": {"type": "number"},
                    "var": {"type": "number", "minimum": 0},
                },
            },
        },
        "allocation": {**_COUNTS, "additionalProperties": {"type": "integer", "minimum": 0}},
        "spend": {"oneOf": [_NUMBER_ARRAY, {"type": "null"}]},
    },
}

EXPERIMENT_CONFIG = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "experiment_config",
    "type": "object",
    "required": ["source", "budgets", "cost_model"],
    "properties": {
        "source": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["gaussian", "empirical"]},
                "mean": _NUMBER_ARRAY,
                "cov": {"type": "array", "items": _NUMBER_ARRAY},
                "rows": {"type": "array", "items": _NUMBER_ARRAY},
                "path": {"type": "string"},
                "replace": {"type": "boolean"},
            },
        },
        "methods": {"type": "array", "items": {"type": "string"}},
        "budgets": {**_NUMBER_ARRAY, "minItems": 1},
        "trials": {"type": "integer", "minimum": 1},
        "n_labeled": {"type": "integer", "minimum": 2},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "covariance_method": {"enum": ["ledoit_wolf", "empirical"]},
        "ci_width_mode": {"enum": ["ratio_of_means", "mean_of_ratios"]},
        "cost_model": {
            "type": "object",
            "required": ["builder"],
            "properties": {
                "builder": {"enum": ["additive", "cascading"]},
                "costs": _NUMBER_ARRAY,
                "input_rate": {"type": "number"},
                "output_rate": {"type": "number"},
                "tiers": _NUMBER_ARRAY,
            },
        },
    },
}

ERROR = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "error",
    "type": "object",
    "required": ["error", "detail"],
    "properties": {"error": {"type": "string"}, "detail": {"type": "string"}},
}

METRICS_COLUMNS = ("method", "budget", "coverage", "ci_width_fraction", "mse_fraction", "trials")
