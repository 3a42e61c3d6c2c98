"""Run configuration: canonical text form, parsing, hashing.

The canonical text is the identity of a run. Two configs are the same
experiment exactly when their canonical texts are byte-identical, and
record filenames derive from the sha256 of that text. Parsing accepts
hand-written files with keys omitted (defaults fill in) and keys in any
order; serialization always re-emits the full sorted form.
"""

import hashlib
from dataclasses import dataclass, fields, replace

from .rules import (
    BasisKind,
    NormalizerKind,
    PostNormalizerKind,
    PreconditionSides,
    UpdateRuleSpec,
)
from .workloads import MATRIX_CLASSES, WorkloadSpec

_RULE_ENUMS = {
    "basis": BasisKind,
    "normalizer": NormalizerKind,
    "post_normalizer": PostNormalizerKind,
    "precondition_sides": PreconditionSides,
}
_RULE_BOOLS = ("kronecker_direct", "bias_correction")
_RULE_INTS = ("refresh_interval", "ns_iters")
_WORKLOAD_INTS = (
    "batch_size", "total_steps", "warmup_steps", "seed", "data_seed",
    "dim", "layers", "d_model", "heads", "vocab", "seq_len",
)

PROBE_AUTO = "auto"
PROBE_OFF = "off"


@dataclass(frozen=True)
class RunConfig:
    """Everything a single training run depends on.

    groups lists the matrix parameter classes the rule under test is
    assigned to; classes left out fall back to the fixed elementwise
    optimizer, which is how single-group ablations are expressed. The
    probe names the parameter whose update matrix gets spectral
    diagnostics, at probe_stride intervals.
    """

    workload: WorkloadSpec
    rule: UpdateRuleSpec
    label: str = ""
    groups: tuple = MATRIX_CLASSES
    probe_param: str = PROBE_AUTO
    probe_stride: int = 50

    def __post_init__(self):
        unknown = [g for g in self.groups if g not in MATRIX_CLASSES]
        if unknown:
            raise ValueError(f"unknown matrix groups {unknown}")
        if len(set(self.groups)) != len(self.groups):
            raise ValueError("duplicate entries in groups")
        if self.probe_stride < 1:
            raise ValueError("probe_stride must be positive")
        # canonical group order, so text form does not depend on input order
        ordered = tuple(g for g in MATRIX_CLASSES if g in self.groups)
        object.__setattr__(self, "groups", ordered)


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, (BasisKind, NormalizerKind, PostNormalizerKind, PreconditionSides)):
        return value.value
    return str(value)


def config_text(cfg):
    """Canonical serialization: fixed section order, sorted keys, all fields."""
    lines = ["[workload]"]
    for f in sorted(fields(WorkloadSpec), key=lambda f: f.name):
        lines.append(f"{f.name} = {_fmt(getattr(cfg.workload, f.name))}")
    lines.append("")
    lines.append("[rule]")
    for f in sorted(fields(UpdateRuleSpec), key=lambda f: f.name):
        lines.append(f"{f.name} = {_fmt(getattr(cfg.rule, f.name))}")
    lines.append("")
    lines.append("[run]")
    lines.append(f"groups = {_fmt(cfg.groups)}")
    lines.append(f"label = {cfg.label}")
    lines.append(f"probe_param = {cfg.probe_param}")
    lines.append(f"probe_stride = {cfg.probe_stride}")
    return "\n".join(lines) + "\n"


def config_hash(cfg):
    return hashlib.sha256(config_text(cfg).encode()).hexdigest()[:16]


def _parse_bool(key, raw):
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ValueError(f"{key}: expected true/false, got {raw!r}")


def _workload_value(key, raw):
    if key == "kind":
        return raw
    if key in _WORKLOAD_INTS:
        return int(raw)
    if key == "noise_scale":
        return float(raw)
    if key == "curvature_spectrum":
        return tuple(float(v) for v in raw.split(",")) if raw else ()
    raise ValueError(f"unknown workload key {key!r}")


def _rule_value(key, raw):
    if key in _RULE_ENUMS:
        return _RULE_ENUMS[key](raw)
    if key in _RULE_BOOLS:
        return _parse_bool(key, raw)
    if key in _RULE_INTS:
        return int(raw)
    if key in {f.name for f in fields(UpdateRuleSpec)}:
        return float(raw)
    raise ValueError(f"unknown rule key {key!r}")


def _run_value(key, raw):
    if key == "groups":
        return tuple(g for g in raw.split(",") if g) if raw else ()
    if key == "label" or key == "probe_param":
        return raw
    if key == "probe_stride":
        return int(raw)
    raise ValueError(f"unknown run key {key!r}")


def _split_sections(text):
    sections = {}
    current = None
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected key = value, got {line!r}")
        if current is None:
            raise ValueError(f"line {ln}: key before any [section] header")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key in sections[current]:
            raise ValueError(f"line {ln}: duplicate key {key!r}")
        sections[current][key] = raw
    return sections


def parse_config(text):
    """Parse a run config; missing keys take dataclass defaults."""
    sections = _split_sections(text)
    unknown = set(sections) - {"workload", "rule", "run"}
    if unknown:
        raise ValueError(f"unknown sections {sorted(unknown)}")
    return config_from_sections(sections)


def config_from_sections(sections):
    """Build a RunConfig from already-split sections, ignoring extras."""
    wl_raw = sections.get("workload", {})
    if "kind" not in wl_raw:
        raise ValueError("workload section must set kind")
    wl_kw = {k: _workload_value(k, v) for k, v in wl_raw.items()}
    workload = WorkloadSpec(**wl_kw)

    rule_kw = {k: _rule_value(k, v) for k, v in sections.get("rule", {}).items()}
    rule = UpdateRuleSpec(**rule_kw)

    run_kw = {k: _run_value(k, v) for k, v in sections.get("run", {}).items()}
    return RunConfig(workload=workload, rule=rule, **run_kw)


def make_config(workload, rule, **run_kw):
    return RunConfig(workload=workload, rule=rule, **run_kw)


def with_rule(cfg, **rule_changes):
    """New config with rule scalars swapped; everything else unchanged."""
    return replace(cfg, rule=replace(cfg.rule, **rule_changes))
