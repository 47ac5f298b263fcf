"""JSON experiment configuration: defaults, validation, overrides and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, NotPositiveDefinite
from .gaussian import MultivariateGaussian, TOY_INIT_COV, TOY_INIT_MEAN, TOY_TARGET_COV, TOY_TARGET_MEAN
from .generator import DIVERGENCES, RATIO_MODELS, TrainConfig
from .hfunctions import parse_h

SCHEMA_VERSION = 1
RATIO_SOURCES = ("moment", "analytic", "discriminator")
VERIFY_SUITES = ("lemma", "corollary", "dissipation", "gradients", "langevin", "all")

# keys filled from the top level of the document rather than the train section
_TRAIN_TOP_LEVEL = {"seed", "init_mean", "init_scale", "target_mean", "target_cov"}
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name not in _TRAIN_TOP_LEVEL)

FLOW_REQUIRED = ("h", "ratio_source", "alpha", "steps", "particles")
FLOW_OPTIONAL = {"u_max": 2.0, "record_every": 1}
LOSSES_KEYS = ("d_min", "d_max", "n", "C")
TOP_KEYS = ("schema_version", "seed", "target", "init", "flow", "train", "losses", "verify", "output_dir")


def default_config() -> dict:
    train = TrainConfig()
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": 0,
        "target": {"mean": list(TOY_TARGET_MEAN), "cov": [list(r) for r in TOY_TARGET_COV]},
        "init": {"mean": list(TOY_INIT_MEAN), "scale": [list(r) for r in TOY_INIT_COV]},
        "flow": {"h": "Identity", "ratio_source": "moment", "alpha": 1e-3, "steps": 5000,
                 "particles": 4096, **FLOW_OPTIONAL},
        "train": {k: getattr(train, k) for k in TRAIN_KEYS},
        "losses": {"d_min": -10.0, "d_max": 10.0, "n": 401, "C": [0.0, 1.0, 3.0, 5.0]},
        "verify": {"suite": "all"},
        "output_dir": "out",
    }


def _reject_unknown(section: dict, allowed, where: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {where + '.' if where else ''}{key}", field=f"{where}.{key}" if where else key)


def _number(value, field: str, integer: bool = False, positive: bool = False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{field} must be a number", field=field)
    if integer and int(value) != value:
        raise ConfigError(f"{field} must be an integer", field=field)
    if not np.isfinite(value):
        raise ConfigError(f"{field} must be finite", field=field)
    if positive and not value > 0:
        raise ConfigError(f"{field} must be positive", field=field)
    return int(value) if integer else float(value)


def _matrix(value, d: int, field: str) -> np.ndarray:
    try:
        m = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{field} must be a numeric matrix", field=field) from None
    if m.shape != (d, d) or not np.all(np.isfinite(m)):
        raise ConfigError(f"{field} must be a finite {d}x{d} matrix", field=field)
    return m


def validate(doc: dict) -> dict:
    """Check a full document (defaults already merged); returns it unchanged."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if "schema_version" not in doc:
        raise ConfigError("missing schema_version", field="schema_version")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {doc['schema_version']!r}", field="schema_version")
    _reject_unknown(doc, TOP_KEYS, "")
    _number(doc["seed"], "seed", integer=True)
    if doc["seed"] < 0:
        raise ConfigError("seed must be nonnegative", field="seed")

    _reject_unknown(doc["target"], ("mean", "cov"), "target")
    _reject_unknown(doc["init"], ("mean", "scale"), "init")
    mean = np.asarray(doc["target"].get("mean"), dtype=float)
    if mean.ndim != 1 or mean.size < 1:
        raise ConfigError("target.mean must be a vector", field="target.mean")
    d = mean.size
    cov = _matrix(doc["target"].get("cov"), d, "target.cov")
    try:
        MultivariateGaussian(mean, cov)
    except (NotPositiveDefinite, ValueError) as exc:
        raise ConfigError(f"target.cov: {exc}", field="target.cov") from None
    if np.asarray(doc["init"].get("mean"), dtype=float).shape != (d,):
        raise ConfigError("init.mean must match the target dimension", field="init.mean")
    scale = _matrix(doc["init"].get("scale"), d, "init.scale")
    if abs(np.linalg.det(scale)) < 1e-12:
        raise ConfigError("init.scale must be invertible", field="init.scale")

    flow = doc["flow"]
    _reject_unknown(flow, FLOW_REQUIRED + tuple(FLOW_OPTIONAL), "flow")
    for key in FLOW_REQUIRED:
        if key not in flow:
            raise ConfigError(f"missing flow.{key}", field=f"flow.{key}")
    try:
        h = parse_h(str(flow["h"]))
    except ValueError as exc:
        raise ConfigError(f"flow.h: {exc}", field="flow.h") from None
    if not h.monotone:
        raise ConfigError(f"flow.h: {h.name} is not monotone", field="flow.h")
    if flow["ratio_source"] not in RATIO_SOURCES:
        raise ConfigError(f"flow.ratio_source must be one of {', '.join(RATIO_SOURCES)}", field="flow.ratio_source")
    _number(flow["alpha"], "flow.alpha", positive=True)
    _number(flow["steps"], "flow.steps", integer=True, positive=True)
    if _number(flow["particles"], "flow.particles", integer=True) < d + 1:
        raise ConfigError("flow.particles must be at least d + 1", field="flow.particles")
    if flow.get("u_max") is not None:
        _number(flow["u_max"], "flow.u_max")
    _number(flow.get("record_every", 1), "flow.record_every", integer=True, positive=True)

    train = doc["train"]
    _reject_unknown(train, TRAIN_KEYS, "train")
    if train.get("divergence") not in DIVERGENCES:
        raise ConfigError(f"train.divergence must be one of {', '.join(DIVERGENCES)}", field="train.divergence")
    if train.get("ratio_model") not in RATIO_MODELS:
        raise ConfigError(f"train.ratio_model must be one of {', '.join(RATIO_MODELS)}", field="train.ratio_model")
    defaults = TrainConfig()
    for key, value in train.items():
        if key not in ("divergence", "ratio_model"):
            _number(value, f"train.{key}", integer=isinstance(getattr(defaults, key), int))
    try:
        train_config(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}", field="train") from None

    losses = doc["losses"]
    _reject_unknown(losses, LOSSES_KEYS, "losses")
    lo = _number(losses["d_min"], "losses.d_min")
    hi = _number(losses["d_max"], "losses.d_max")
    if not lo < hi:
        raise ConfigError("losses.d_min must be below losses.d_max", field="losses.d_min")
    if _number(losses["n"], "losses.n", integer=True) < 2:
        raise ConfigError("losses.n must be at least 2", field="losses.n")
    if not isinstance(losses["C"], list):
        raise ConfigError("losses.C must be a list", field="losses.C")
    for c in losses["C"]:
        _number(c, "losses.C")

    _reject_unknown(doc["verify"], ("suite",), "verify")
    if doc["verify"].get("suite") not in VERIFY_SUITES:
        raise ConfigError(f"verify.suite must be one of {', '.join(VERIFY_SUITES)}", field="verify.suite")
    if not isinstance(doc["output_dir"], str):
        raise ConfigError("output_dir must be a string", field="output_dir")
    return doc


def merge_defaults(doc: dict) -> dict:
    """Fill absent sections from the defaults.

    A section that is present is taken as written, except that the optional
    flow keys and any train keys it omits fall back to their defaults.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    out = default_config()
    for key, value in doc.items():
        if key in ("train",) and isinstance(value, dict):
            out[key] = {**out[key], **value}
        elif key == "flow" and isinstance(value, dict):
            out[key] = {**FLOW_OPTIONAL, **value}
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if isinstance(raw, dict) and "schema_version" not in raw:
        raise ConfigError("missing schema_version", field="schema_version")
    return merge_defaults(raw)


def parse_value(text: str):
    """JSON literal if it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc: dict, assignment: str, section: str | None = None) -> dict:
    """Apply ``KEY=VALUE`` in place. Dotted keys address nested fields; a bare
    key that is not top-level is looked up in ``section``."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not KEY=VALUE")
    key, _, raw = assignment.partition("=")
    parts = key.strip().split(".")
    if len(parts) == 1 and parts[0] not in TOP_KEYS and section is not None:
        parts = [section, parts[0]]
    node = doc
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"override {key!r} does not name a config section", field=key)
        node = node[part]
    node[parts[-1]] = parse_value(raw)
    return doc


def config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def target_of(doc: dict) -> MultivariateGaussian:
    return MultivariateGaussian(np.asarray(doc["target"]["mean"], float), np.asarray(doc["target"]["cov"], float))


def init_of(doc: dict) -> MultivariateGaussian:
    s = np.asarray(doc["init"]["scale"], float)
    return MultivariateGaussian(np.asarray(doc["init"]["mean"], float), s.T @ s)


def train_config(doc: dict, **changes) -> TrainConfig:
    kw = dict(doc["train"])
    kw.update(
        seed=int(doc["seed"]),
        init_mean=tuple(doc["init"]["mean"]),
        init_scale=tuple(map(tuple, doc["init"]["scale"])),
        target_mean=tuple(doc["target"]["mean"]),
        target_cov=tuple(map(tuple, doc["target"]["cov"])),
    )
    kw.update(changes)
    return TrainConfig(**kw)
