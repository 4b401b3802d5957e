"""Scenario files and canonical JSON output.

A scenario is a JSON object::

    {
      "meeting": {"family": "urnball", "alpha": 1, "beta": 1},
      "prior": {"kind": "uniform", "n": 101},
      "k": 1,
      "lambda": {"kind": "constant", "ell": 1},
      "segmentation": "perfect",
      "options": {"mesh": 404}
    }

``prior`` may also be ``{"grid": [...], "weights": [...]}``.  ``lambda`` may be
a bare number (constant share) or ``{"kind": "table", "values": [...]}``.
``segmentation`` is ``"perfect"``, ``"pooled"``, ``"lower_censorship"`` or an
object with ``kind`` one of ``binary`` (``cutoff_index``, optional ``split``),
``partition`` (``blocks`` of 0-based indices) or ``explicit`` (``submarkets``).
Unknown fields are rejected everywhere.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .market import (
    Prior,
    Segmentation,
    SurplusSplit,
    binary_segmentation,
    make_prior_uniform,
    perfect_segmentation,
    pooled_segmentation,
    segmentation_from_partition,
)
from .meeting import MeetingFunction

SCENARIO_FIELDS = {"meeting", "prior", "k", "lambda", "segmentation", "options", "seed"}
OPTION_FIELDS = {"mesh", "tol", "lambda_at_cutoff", "exhaustive", "max_n", "method", "oracle"}


@dataclass(frozen=True, eq=False)
class Scenario:
    meeting: MeetingFunction
    prior: Prior
    k: float
    split: SurplusSplit
    segmentation_spec: object = "perfect"
    options: dict = field(default_factory=dict)
    seed: int | None = None

    def segmentation(self) -> Segmentation:
        return parse_segmentation(self.segmentation_spec, self.prior, self)

    def to_dict(self) -> dict:
        d = {
            "meeting": self.meeting.to_dict(),
            "prior": self.prior.to_dict(),
            "k": self.k,
            "lambda": self.split.to_dict(),
            "segmentation": self.segmentation_spec,
            "options": dict(self.options),
        }
        if self.seed is not None:
            d["seed"] = self.seed
        return d


def _exact_keys(d, allowed: set, required: set, where: str) -> None:
    if not isinstance(d, dict):
        raise ValidationError(f"{where} must be an object", field=where)
    extra = set(d) - allowed
    if extra:
        raise ValidationError(f"unknown {where} fields {sorted(extra)}", field=where)
    missing = required - set(d)
    if missing:
        raise ValidationError(f"missing {where} fields {sorted(missing)}", field=where)


def parse_prior(spec) -> Prior:
    if not isinstance(spec, dict):
        raise ValidationError("prior must be an object", field="prior")
    kind = spec.get("kind", "grid")
    if kind == "uniform":
        _exact_keys(spec, {"kind", "n"}, {"n"}, "prior")
        return make_prior_uniform(spec["n"])
    if kind == "grid":
        _exact_keys(spec, {"kind", "grid", "weights"}, {"grid", "weights"}, "prior")
        return Prior(spec["grid"], spec["weights"])
    raise ValidationError(f"unknown prior kind {kind!r}", field="prior.kind")


def parse_split(spec) -> SurplusSplit:
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return SurplusSplit.constant(float(spec))
    if not isinstance(spec, dict):
        raise ValidationError("lambda must be a number or an object", field="lambda")
    kind = spec.get("kind")
    if kind == "constant":
        _exact_keys(spec, {"kind", "ell"}, {"ell"}, "lambda")
        return SurplusSplit.constant(spec["ell"])
    if kind == "table":
        _exact_keys(spec, {"kind", "values"}, {"values"}, "lambda")
        return SurplusSplit.table(spec["values"])
    raise ValidationError(f"unknown lambda kind {kind!r}", field="lambda.kind")


def parse_segmentation(spec, prior: Prior, scenario: Scenario | None = None) -> Segmentation:
    if spec == "perfect":
        return perfect_segmentation(prior)
    if spec == "pooled":
        return pooled_segmentation(prior)
    if spec == "lower_censorship":
        if scenario is None:
            raise ValidationError("lower_censorship needs the full scenario")
        from .planner import lower_censorship

        return lower_censorship(prior, scenario.meeting, scenario.k)
    if not isinstance(spec, dict):
        raise ValidationError(f"unknown segmentation directive {spec!r}", field="segmentation")
    kind = spec.get("kind")
    if kind in ("perfect", "pooled", "lower_censorship"):
        _exact_keys(spec, {"kind"}, set(), "segmentation")
        return parse_segmentation(kind, prior, scenario)
    if kind == "binary":
        _exact_keys(spec, {"kind", "cutoff_index", "split"}, {"cutoff_index"}, "segmentation")
        return binary_segmentation(prior, spec["cutoff_index"], float(spec.get("split", 1.0)))
    if kind == "partition":
        _exact_keys(spec, {"kind", "blocks"}, {"blocks"}, "segmentation")
        return segmentation_from_partition(prior, spec["blocks"])
    if kind == "explicit":
        _exact_keys(spec, {"kind", "submarkets"}, {"submarkets"}, "segmentation")
        seg = Segmentation.from_dict(spec)
        seg._aligned(prior)
        return seg
    raise ValidationError(f"unknown segmentation kind {kind!r}", field="segmentation.kind")


def parse_scenario(d) -> Scenario:
    _exact_keys(d, SCENARIO_FIELDS, {"meeting", "prior"}, "scenario")
    meeting = MeetingFunction.from_dict(d["meeting"]) if isinstance(d["meeting"], dict) else None
    if meeting is None:
        raise ValidationError("meeting must be an object", field="meeting")
    prior = parse_prior(d["prior"])
    k = d.get("k", 1.0)
    if isinstance(k, bool) or not isinstance(k, (int, float)) or not (k > 0 and math.isfinite(k)):
        raise ValidationError("k must be a positive number", field="k")
    split = parse_split(d.get("lambda", 1.0))
    options = d.get("options", {})
    _exact_keys(options, OPTION_FIELDS, set(), "options")
    seed = d.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        raise ValidationError("seed must be an integer", field="seed")
    sc = Scenario(meeting, prior, float(k), split, d.get("segmentation", "perfect"), dict(options), seed)
    sc.segmentation()  # validate eagerly
    if split.kind == "table":
        split.on(prior)
    return sc


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read scenario: {exc}", path=str(path)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"scenario is not valid JSON: {exc}", path=str(path)) from exc
    return parse_scenario(data)


# -- canonical JSON ------------------------------------------------------------------


def _canon(obj) -> str:
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_)):
        return json.dumps(bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        return "%.17g" % x
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _canon(obj.tolist())
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(json.dumps(k) + ":" + _canon(v) for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_canon(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def canonical_json(obj) -> str:
    """Sorted keys, 17 significant digits, no whitespace, trailing newline."""
    return _canon(obj) + "\n"
