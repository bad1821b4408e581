"""
Experiment Config Parser

Reads experiment definitions from YAML/JSON files in experiment_configs/.

Sections:
  - sequence:   which task sequence to build (dataset, length, split sizes, seed)
  - continual:  learner strategy, drift policy, expansion and regularization knobs
  - training:   Adam / mini-batch settings shared by every training phase
  - run-level:  folds, seeds, data and output directories, worker count

Features:
  - Environment variable substitution: ${VAR_NAME} or ${VAR_NAME:-default}
  - Schema validation that reports every offending field at once
  - Canonical form + SHA-256 hash naming a run
  - Desk-scale preset for quick runs
"""

import copy
import hashlib
import json
import os
import re
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import yaml

from ..errors import ConfigError

DATA_DIR_ENV = "ANGULAR_CL_DATA_DIR"

DATASETS = ("permuted-mnist", "permuted-fashion-mnist", "rotated-mnist")
METRICS = ("angular", "euclidean_sq", "manhattan")
STRATEGIES = ("drift", "naive")

# Training and test pool sizes shared by MNIST and Fashion-MNIST.
POOL_SIZE = 60000
TEST_POOL_SIZE = 10000


# ── Environment variable substitution ─────────────────────────


_ENV_PATTERN = re.compile(r"\$\{(\w+)(?::-(.*?))?\}")


def _resolve_env(value: Any) -> Any:
    """Recursively resolve ${VAR} and ${VAR:-default} in strings, dicts, lists."""
    if isinstance(value, str):
        def _replacer(m: re.Match) -> str:
            env_val = os.environ.get(m.group(1))
            if env_val is not None:
                return env_val
            if m.group(2) is not None:
                return m.group(2)
            return m.group(0)
        return _ENV_PATTERN.sub(_replacer, value)
    elif isinstance(value, dict):
        return {k: _resolve_env(v) for k, v in value.items()}
    elif isinstance(value, list):
        return [_resolve_env(item) for item in value]
    return value


def default_data_dir() -> str:
    return os.environ.get(DATA_DIR_ENV, "data")


# ── Task sequence ─────────────────────────────────────────────


@dataclass
class SequenceConfig:
    """Which task sequence to build and how to split it."""

    dataset: str = "permuted-mnist"
    num_tasks: int = 10
    train_size: int = 55000
    val_size: int = 5000
    test_size: int = 10000
    seed: int = 0

    @property
    def base_dataset(self) -> str:
        return "fashion-mnist" if self.dataset == "permuted-fashion-mnist" else "mnist"

    @property
    def rotated(self) -> bool:
        return self.dataset == "rotated-mnist"


# ── Training ──────────────────────────────────────────────────


@dataclass
class TrainingConfig:
    """Adam + mini-batch settings (defaults: lr 0.001, batch 256, 4300 iterations)."""

    learning_rate: float = 0.001
    batch_size: int = 256
    iterations: int = 4300
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int = 100
    eval_batch_size: int = 4096


# ── Drift policy ──────────────────────────────────────────────


@dataclass(frozen=True)
class DriftPolicy:
    """How node drift is measured and split into freeze / regularize / duplicate.

    Thresholds are degrees for the angular metric and raw distances otherwise.
    """

    metric: str = "angular"
    sigma_duplicate: float = 30.0
    sigma_freeze: float = 2.0
    # angle reported when exactly one of the two vectors is zero
    zero_vector_angle: float = 90.0

    def __post_init__(self):
        errors = _policy_errors(self)
        if errors:
            raise ConfigError("Invalid drift policy", errors)

    @classmethod
    def for_metric(cls, metric: str, sigma_duplicate: float | None = None) -> "DriftPolicy":
        if metric == "angular":
            policy = cls(metric=metric)
        else:
            policy = cls(metric=metric, sigma_duplicate=1.0, sigma_freeze=1e-3)
        return policy if sigma_duplicate is None else policy.with_threshold(sigma_duplicate)

    def with_threshold(self, sigma_duplicate: float) -> "DriftPolicy":
        """Copy with a new duplicate threshold, lowering sigma_freeze below it if needed."""
        sigma_freeze = self.sigma_freeze
        if sigma_freeze >= sigma_duplicate:
            sigma_freeze = sigma_duplicate / 2.0
        return replace(self, sigma_duplicate=float(sigma_duplicate), sigma_freeze=sigma_freeze)


def _policy_errors(policy: DriftPolicy) -> list[str]:
    errors = []
    if policy.metric not in METRICS:
        errors.append(f"metric ({policy.metric!r} not in {METRICS})")
    if policy.sigma_freeze < 0:
        errors.append("sigma_freeze (must be >= 0)")
    if policy.sigma_freeze >= policy.sigma_duplicate:
        errors.append("sigma_freeze (must be < sigma_duplicate)")
    if policy.metric == "angular" and not 0.0 < policy.sigma_duplicate <= 180.0:
        errors.append("sigma_duplicate (angular threshold must be in (0, 180])")
    if policy.metric != "angular" and policy.sigma_duplicate <= 0:
        errors.append("sigma_duplicate (must be > 0)")
    return errors


# ── Continual learner ─────────────────────────────────────────


@dataclass
class ContinualConfig:
    """Knobs of the sequence learner.

    `expansion_ratio` is the trigger bar: expand when the selective-retrain
    validation accuracy falls below ratio × mean validation accuracy of the
    previous tasks.
    """

    strategy: str = "drift"
    drift_policy: DriftPolicy = field(default_factory=DriftPolicy)
    hidden_widths: list[int] = field(default_factory=lambda: [312, 128])
    candidate_fraction: float = 0.1
    candidate_iterations: int = 430
    selective_iterations: int = 430
    expansion_k: int = 10
    expansion_ratio: float = 0.9
    anchor_lambda: float = 0.1
    mu: float = 1e-5
    enable_selective_retrain: bool = True
    enable_expansion: bool = True
    enable_duplication: bool = True
    training: TrainingConfig = field(default_factory=TrainingConfig)


# ── Top-level experiment ──────────────────────────────────────


@dataclass
class ExperimentConfig:
    """Top-level experiment parsed from one YAML file."""

    name: str = "experiment"
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    continual: ContinualConfig = field(default_factory=ContinualConfig)
    folds: int = 5
    seeds: list[int] = field(default_factory=lambda: [0])
    data_dir: str = field(default_factory=default_data_dir)
    output_dir: str = "runs"
    workers: int = 1


# Fields that do not influence results and stay out of the canonical form.
_NON_CANONICAL = ("name", "data_dir", "output_dir", "workers")


def canonical_dict(config: ExperimentConfig) -> dict[str, Any]:
    raw = asdict(config)
    for key in _NON_CANONICAL:
        raw.pop(key, None)
    return raw


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON form."""
    text = json.dumps(canonical_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def run_name(config: ExperimentConfig) -> str:
    return f"{config.sequence.dataset}-{config_hash(config)[:12]}"


# ── Parsing ───────────────────────────────────────────────────


def parse_experiment_file(file_path: str) -> ExperimentConfig:
    """Parse a single experiment definition file (YAML or JSON)."""
    if not os.path.exists(file_path):
        raise FileNotFoundError(f"Experiment config not found: {file_path}")
    with open(file_path, "r", encoding="utf-8") as f:
        if file_path.endswith((".yaml", ".yml")):
            raw = yaml.safe_load(f)
        elif file_path.endswith(".json"):
            raw = json.load(f)
        else:
            raise ConfigError(f"Unsupported file format: {file_path}")

    raw = _resolve_env(raw or {})
    return build_config(raw)


def fold_train_capacity(pool_size: int, folds: int) -> int:
    """Rows left for training in the smallest k-fold training part."""
    return pool_size - -(-pool_size // folds)


def build_config(raw: dict) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from a plain dict.

    An omitted sequence.train_size with folds > 1 is capped at the fold
    training part, so the defaults (55000 rows, 5 folds) train on 48000.
    """
    if not isinstance(raw, dict):
        raise ConfigError("Experiment config must be a mapping")
    errors: list[str] = []
    _check_keys(raw, {f.name for f in _fields(ExperimentConfig)}, "", errors)

    sequence = _build_section(SequenceConfig, raw.get("sequence"), "sequence", errors)
    continual = _build_continual(raw.get("continual"), errors)
    config = ExperimentConfig(
        name=str(raw.get("name", "experiment")),
        sequence=sequence,
        continual=continual,
        folds=_as(int, raw.get("folds", 5), "folds", errors),
        seeds=[_as(int, s, "seeds", errors) for s in _as_list(raw.get("seeds", [0]))],
        data_dir=str(raw.get("data_dir") or default_data_dir()),
        output_dir=str(raw.get("output_dir", "runs")),
        workers=_as(int, raw.get("workers", 1), "workers", errors),
    )
    raw_sequence = raw.get("sequence") if isinstance(raw.get("sequence"), dict) else {}
    if "train_size" not in raw_sequence and config.folds > 1:
        sequence.train_size = min(sequence.train_size, fold_train_capacity(POOL_SIZE, config.folds))
    errors.extend(validate_config(config))
    if errors:
        raise ConfigError("Invalid experiment config", errors)
    return config


def validate_config(config: ExperimentConfig) -> list[str]:
    """Return a list of offending fields (empty when valid)."""
    errors = []
    seq = config.sequence
    if seq.dataset not in DATASETS:
        errors.append(f"sequence.dataset ({seq.dataset!r} not in {DATASETS})")
    if seq.num_tasks < 1:
        errors.append("sequence.num_tasks (must be >= 1)")
    for name in ("train_size", "val_size", "test_size"):
        if getattr(seq, name) < 1:
            errors.append(f"sequence.{name} (must be >= 1)")
    if seq.test_size > TEST_POOL_SIZE:
        errors.append(f"sequence.test_size (exceeds the {TEST_POOL_SIZE}-row test set)")
    if config.folds > 1:
        capacity = fold_train_capacity(POOL_SIZE, config.folds)
        if seq.train_size > capacity:
            errors.append(
                f"sequence.train_size ({seq.train_size} exceeds the {capacity}-row training part of {config.folds} folds)"
            )
    elif seq.train_size + seq.val_size > POOL_SIZE:
        errors.append(f"sequence.train_size + sequence.val_size (exceeds the {POOL_SIZE}-row pool)")

    cont = config.continual
    if cont.strategy not in STRATEGIES:
        errors.append(f"continual.strategy ({cont.strategy!r} not in {STRATEGIES})")
    if not cont.hidden_widths or any(w < 1 for w in cont.hidden_widths):
        errors.append("continual.hidden_widths (every width must be >= 1)")
    if not 0.0 < cont.candidate_fraction <= 1.0:
        errors.append("continual.candidate_fraction (must be in (0, 1])")
    if cont.candidate_iterations < 1:
        errors.append("continual.candidate_iterations (must be >= 1)")
    if cont.selective_iterations < 0:
        errors.append("continual.selective_iterations (must be >= 0)")
    if cont.expansion_k < 1:
        errors.append("continual.expansion_k (must be >= 1)")
    if cont.anchor_lambda < 0:
        errors.append("continual.anchor_lambda (must be >= 0)")
    if cont.mu < 0:
        errors.append("continual.mu (must be >= 0)")

    tr = cont.training
    if tr.learning_rate <= 0:
        errors.append("continual.training.learning_rate (must be > 0)")
    if tr.batch_size < 1:
        errors.append("continual.training.batch_size (must be >= 1)")
    if tr.iterations < 0:
        errors.append("continual.training.iterations (must be >= 0)")
    if tr.eval_every < 1:
        errors.append("continual.training.eval_every (must be >= 1)")

    if config.folds < 1:
        errors.append("folds (must be >= 1)")
    if not config.seeds:
        errors.append("seeds (at least one seed required)")
    if config.workers < 1:
        errors.append("workers (must be >= 1)")
    return errors


# ── Presets and overrides ─────────────────────────────────────


def apply_desk_scale(config: ExperimentConfig) -> ExperimentConfig:
    """Reduced preset: 5 tasks, 10K train per task, 1000 iterations, 1 fold."""
    config = copy.deepcopy(config)
    config.sequence.num_tasks = 5
    config.sequence.train_size = 10000
    config.sequence.val_size = 1000
    config.continual.training.iterations = 1000
    config.continual.candidate_iterations = 100
    config.continual.selective_iterations = 100
    config.folds = 1
    return config


def with_drift_policy(config: ExperimentConfig, policy: DriftPolicy) -> ExperimentConfig:
    config = copy.deepcopy(config)
    config.continual.drift_policy = policy
    return config


# ── Internal builders ─────────────────────────────────────────


def _fields(cls):
    return cls.__dataclass_fields__.values()


def _check_keys(raw: dict, allowed: set[str], prefix: str, errors: list[str]) -> None:
    for key in raw:
        if key not in allowed:
            errors.append(f"{prefix}{key} (unknown field)")


def _as(kind: type, value: Any, name: str, errors: list[str]) -> Any:
    if kind is bool:
        if isinstance(value, bool):
            return value
        errors.append(f"{name} (expected bool, got {value!r})")
        return False
    try:
        return kind(value)
    except (TypeError, ValueError):
        errors.append(f"{name} (expected {kind.__name__}, got {value!r})")
        return kind()


def _as_list(value: Any) -> list:
    if value is None:
        return []
    return value if isinstance(value, list) else [value]


def _build_section(cls, raw: dict | None, prefix: str, errors: list[str]):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        errors.append(f"{prefix} (expected mapping)")
        return cls()
    _check_keys(raw, {f.name for f in _fields(cls)}, f"{prefix}.", errors)
    defaults = cls()
    values = {}
    for f in _fields(cls):
        if f.name in raw:
            kind = type(getattr(defaults, f.name))
            values[f.name] = _as(kind, raw[f.name], f"{prefix}.{f.name}", errors)
    return replace(defaults, **values)


def _build_policy(raw: dict | None, errors: list[str]) -> DriftPolicy:
    if raw is None:
        return DriftPolicy()
    if not isinstance(raw, dict):
        errors.append("continual.drift_policy (expected mapping)")
        return DriftPolicy()
    _check_keys(raw, {f.name for f in _fields(DriftPolicy)}, "continual.drift_policy.", errors)
    metric = str(raw.get("metric", "angular"))
    if metric not in METRICS:
        errors.append(f"continual.drift_policy.metric ({metric!r} not in {METRICS})")
        return DriftPolicy()
    base = DriftPolicy.for_metric(metric)
    try:
        return DriftPolicy(
            metric=metric,
            sigma_duplicate=float(raw.get("sigma_duplicate", base.sigma_duplicate)),
            sigma_freeze=float(raw.get("sigma_freeze", base.sigma_freeze)),
            zero_vector_angle=float(raw.get("zero_vector_angle", base.zero_vector_angle)),
        )
    except ConfigError as e:
        errors.extend(f"continual.drift_policy.{f}" for f in e.fields)
    except (TypeError, ValueError):
        errors.append("continual.drift_policy (thresholds must be numbers)")
    return DriftPolicy()


def _build_continual(raw: dict | None, errors: list[str]) -> ContinualConfig:
    if raw is None:
        return ContinualConfig()
    if not isinstance(raw, dict):
        errors.append("continual (expected mapping)")
        return ContinualConfig()
    _check_keys(raw, {f.name for f in _fields(ContinualConfig)}, "continual.", errors)
    defaults = ContinualConfig()
    values: dict[str, Any] = {}
    for f in _fields(ContinualConfig):
        if f.name not in raw or f.name in ("drift_policy", "training", "hidden_widths"):
            continue
        kind = type(getattr(defaults, f.name))
        values[f.name] = _as(kind, raw[f.name], f"continual.{f.name}", errors)
    if "hidden_widths" in raw:
        values["hidden_widths"] = [
            _as(int, w, "continual.hidden_widths", errors) for w in _as_list(raw["hidden_widths"])
        ]
    values["drift_policy"] = _build_policy(raw.get("drift_policy"), errors)
    values["training"] = _build_section(TrainingConfig, raw.get("training"), "continual.training", errors)
    return replace(defaults, **values)
