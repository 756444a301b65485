"""Plain-text experiment configuration: sectioned key=value files merged
with command-line overrides, resolved to full ExperimentConfig variants."""

from __future__ import annotations

from dataclasses import replace

from .acquisition import AcquisitionKind, AcquisitionSpec, MarginConvention
from .objectives import (
    Direction,
    builtin_names,
    builtin_objective,
    subprocess_objective,
)
from .runner import ExperimentConfig, default_search_budget
from .sampling import SearchBudget

__all__ = ["ConfigError", "parse_config", "parse_config_text", "resolved_config_text"]

_EXPERIMENT_KEYS = {
    "objective",
    "acquisition",
    "epsilon",
    "margin_convention",
    "n_init",
    "budget",
    "repeats",
    "seed",
    "candidates",
    "refine_starts",
    "gp_restarts",
    "bootstrap_resamples",
}
_EXTERNAL_KEYS = {"command", "dimension", "bounds", "direction", "timeout"}

_DEFAULTS = {
    "acquisition": "aei",
    "epsilon": "0.0",
    "margin_convention": "raise-target",
    "n_init": "3",
    "budget": "50",
    "repeats": "10",
    "seed": "0",
    "candidates": "auto",  # dimension-scaled, see runner.default_search_budget
    "refine_starts": "auto",
    "gp_restarts": "5",
    "bootstrap_resamples": "1000",
}


class ConfigError(ValueError):
    """A configuration problem, annotated with its source location."""

    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        where = source if line is None else f"{source}, line {line}"
        super().__init__(f"{where}: {message}")
        self.line = line


def _parse_sections(text: str, source: str):
    """Returns {section: {key: (value, line)}} with duplicate/unknown keys
    rejected at their line."""
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in ("experiment", "external"):
                raise ConfigError(f"unknown section [{current}]", source, lineno)
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {line!r}", source, lineno)
        if current is None:
            raise ConfigError(
                "key outside any section (start with [experiment])", source, lineno
            )
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        allowed = _EXPERIMENT_KEYS if current == "experiment" else _EXTERNAL_KEYS
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{current}]", source, lineno)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r}", source, lineno)
        sections[current][key] = (value, lineno)
    return sections


def _positive_int(value: str, key: str, source: str, line, minimum: int = 0) -> int:
    try:
        out = int(value)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {value!r}", source, line)
    if out < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {out}", source, line)
    return out


def _non_negative_float(value: str, key: str, source: str, line) -> float:
    try:
        out = float(value)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {value!r}", source, line)
    if out < 0:
        raise ConfigError(f"{key} must be >= 0, got {out}", source, line)
    return out


def _parse_acquisition_tokens(value: str, default_epsilon: float, convention, source, line):
    specs = []
    for token in value.split(","):
        token = token.strip().lower()
        if not token:
            raise ConfigError("empty acquisition entry", source, line)
        name, _, margin_text = token.partition(":")
        if name not in ("pi", "ei", "aei"):
            raise ConfigError(
                f"acquisition must be pi, ei or aei (got {name!r})", source, line
            )
        if name == "aei":
            if margin_text:
                raise ConfigError("aei does not take a margin", source, line)
            specs.append(AcquisitionSpec(AcquisitionKind.AEI, margin_convention=convention))
            continue
        margin = (
            _non_negative_float(margin_text, "acquisition margin", source, line)
            if margin_text
            else default_epsilon
        )
        specs.append(
            AcquisitionSpec(AcquisitionKind(name), margin=margin, margin_convention=convention)
        )
    return specs


def _build_external(section: dict, source: str):
    for required in ("command", "dimension", "bounds", "direction"):
        if required not in section:
            raise ConfigError(f"[external] section is missing {required!r}", source)
    command, _ = section["command"]
    dim_text, dim_line = section["dimension"]
    dimension = _positive_int(dim_text, "dimension", source, dim_line, minimum=1)
    bounds_text, bounds_line = section["bounds"]
    bounds = []
    for pair in bounds_text.split(";"):
        parts = pair.split(",")
        if len(parts) != 2:
            raise ConfigError(
                f"bounds pairs must be 'low,high; ...', got {pair.strip()!r}",
                source,
                bounds_line,
            )
        try:
            lo, hi = float(parts[0]), float(parts[1])
        except ValueError:
            raise ConfigError(f"bad bounds pair {pair.strip()!r}", source, bounds_line)
        if lo >= hi:
            raise ConfigError(f"bounds must have low < high, got {pair.strip()!r}", source, bounds_line)
        bounds.append((lo, hi))
    if len(bounds) != dimension:
        raise ConfigError(
            f"{dimension}-dimensional objective with {len(bounds)} bounds pairs",
            source,
            bounds_line,
        )
    direction_text, direction_line = section["direction"]
    if direction_text not in ("minimize", "maximize"):
        raise ConfigError(
            f"direction must be minimize or maximize, got {direction_text!r}",
            source,
            direction_line,
        )
    timeout = 300.0
    if "timeout" in section:
        timeout_text, timeout_line = section["timeout"]
        timeout = _non_negative_float(timeout_text, "timeout", source, timeout_line)
        if timeout == 0:
            raise ConfigError("timeout must be > 0", source, timeout_line)
    return subprocess_objective(
        command, dimension, bounds, Direction(direction_text), timeout=timeout
    )


def parse_config_text(
    text: str, source: str = "<config>", overrides: dict | None = None
) -> list[ExperimentConfig]:
    """Resolve config text plus overrides into one ExperimentConfig per
    acquisition variant (variants differ only in acquisition)."""
    sections = _parse_sections(text, source)
    experiment = dict(sections.get("experiment", {}))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _EXPERIMENT_KEYS:
            raise ConfigError(f"unknown override {key!r}", "command line")
        experiment[key] = (str(value), None)
    merged = {k: (v, None) for k, v in _DEFAULTS.items()}
    merged.update(experiment)

    if "objective" not in merged:
        raise ConfigError("missing required key 'objective'", source)
    objective_name, obj_line = merged["objective"]
    if objective_name == "external":
        if "external" not in sections:
            raise ConfigError(
                "objective = external requires an [external] section", source, obj_line
            )
        objective = _build_external(sections["external"], source)
    elif objective_name in builtin_names():
        objective = builtin_objective(objective_name)
    else:
        raise ConfigError(
            f"unknown objective {objective_name!r}; built-ins are "
            f"{', '.join(builtin_names())} (or 'external')",
            source,
            obj_line,
        )

    conv_text, conv_line = merged["margin_convention"]
    try:
        convention = MarginConvention(conv_text)
    except ValueError:
        raise ConfigError(
            f"margin_convention must be raise-target or paper-literal, got "
            f"{conv_text!r}",
            source,
            conv_line,
        )
    eps_text, eps_line = merged["epsilon"]
    epsilon = _non_negative_float(eps_text, "epsilon", source, eps_line)
    acq_text, acq_line = merged["acquisition"]
    specs = _parse_acquisition_tokens(acq_text, epsilon, convention, source, acq_line)
    labels = set()
    for spec in specs:
        key = (spec.kind, spec.margin)
        if key in labels:
            raise ConfigError(f"duplicate acquisition entry {spec.kind.value}", source, acq_line)
        labels.add(key)

    auto = default_search_budget(objective.dimension)
    candidates_text, candidates_line = merged["candidates"]
    candidates = (
        auto.candidates
        if candidates_text == "auto"
        else _positive_int(candidates_text, "candidates", source, candidates_line, minimum=1)
    )
    refine_text, refine_line = merged["refine_starts"]
    refine_starts = (
        auto.refine_starts
        if refine_text == "auto"
        else _positive_int(refine_text, "refine_starts", source, refine_line)
    )

    base = ExperimentConfig(
        objective=objective,
        acquisition=specs[0],
        n_init=_positive_int(merged["n_init"][0], "n_init", source, merged["n_init"][1], minimum=1),
        budget=_positive_int(merged["budget"][0], "budget", source, merged["budget"][1]),
        repeats=_positive_int(merged["repeats"][0], "repeats", source, merged["repeats"][1], minimum=1),
        master_seed=_positive_int(merged["seed"][0], "seed", source, merged["seed"][1]),
        candidate_budget=SearchBudget(candidates=candidates, refine_starts=refine_starts),
        bootstrap_resamples=_positive_int(
            merged["bootstrap_resamples"][0],
            "bootstrap_resamples",
            source,
            merged["bootstrap_resamples"][1],
            minimum=1,
        ),
        gp_restarts=_positive_int(
            merged["gp_restarts"][0], "gp_restarts", source, merged["gp_restarts"][1]
        ),
    )
    return [replace(base, acquisition=spec) for spec in specs]


def parse_config(path: str | None, overrides: dict | None = None) -> list[ExperimentConfig]:
    """Parse a config file (optional) merged with command-line overrides."""
    if path is None:
        return parse_config_text("[experiment]\n", "<defaults>", overrides)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path))
    return parse_config_text(text, str(path), overrides)


def _acquisition_field(configs: list[ExperimentConfig]) -> str:
    tokens = []
    for cfg in configs:
        spec = cfg.acquisition
        if spec.kind is AcquisitionKind.AEI:
            tokens.append("aei")
        else:
            tokens.append(f"{spec.kind.value}:{spec.margin!r}")
    return ", ".join(tokens)


def resolved_config_text(configs: list[ExperimentConfig]) -> str:
    """Canonical config text for the resolved variants; re-parsing it
    reproduces the same configs."""
    base = configs[0]
    lines = [
        "[experiment]",
        f"objective = {base.objective.name if base.objective.name in builtin_names() else 'external'}",
        f"acquisition = {_acquisition_field(configs)}",
        f"margin_convention = {base.acquisition.margin_convention.value}",
        f"n_init = {base.n_init}",
        f"budget = {base.budget}",
        f"repeats = {base.repeats}",
        f"seed = {base.master_seed}",
        f"candidates = {base.candidate_budget.candidates}",
        f"refine_starts = {base.candidate_budget.refine_starts}",
        f"gp_restarts = {base.gp_restarts}",
        f"bootstrap_resamples = {base.bootstrap_resamples}",
    ]
    obj = base.objective
    if obj.name not in builtin_names():
        worker = getattr(obj.evaluator, "__self__", None)
        command = getattr(worker, "command", "")
        timeout = getattr(worker, "timeout", 300.0)
        lines += [
            "",
            "[external]",
            f"command = {command}",
            f"dimension = {obj.dimension}",
            "bounds = " + "; ".join(f"{lo!r},{hi!r}" for lo, hi in obj.bounds),
            f"direction = {obj.direction.value}",
            f"timeout = {timeout!r}",
        ]
    return "\n".join(lines) + "\n"
