"""Hyperparameter sweeps: multiplicative grids, half-life EMA axes,
resumable scheduling, local-optimum bookkeeping.

Momentum coefficients are swept on the half-life scale (the number of
steps after which a gradient's weight falls to one half), because equal
multiplicative steps in half-life mean equal multiplicative steps in
ln(beta), which is how averaging windows actually trade off.
"""

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .config import _split_sections, config_from_sections, with_rule
from .training import (
    STATUS_OK,
    load_record,
    record_path,
    save_record,
    train_run,
)

LR_FACTOR = 10.0 ** 0.125
WD_FACTOR = 10.0 ** 0.25
BETA1_HALFLIFE_FACTOR = 10.0 ** 0.25
BETA2_HALFLIFE_FACTOR = 10.0 ** 0.5


def halflife_to_beta(h):
    """EMA coefficient whose weight halves after h steps: beta = 0.5^(1/h)."""
    if h <= 0:
        raise ValueError(f"half-life must be positive, got {h}")
    return 0.5 ** (1.0 / h)


def beta_to_halflife(beta):
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    return math.log(0.5) / math.log(beta)


@dataclass(frozen=True)
class SweepGrid:
    """Multiplicative grid around per-axis centers.

    An axis is active when its center is set; it contributes 2*span+1
    values center*factor^k, k in [-span, span]. The beta2 axis is
    additionally dropped for rules that own no beta2-driven buffer.
    wd_center may be 0.0, which pins the axis to exactly {0}.
    """

    lr_center: float
    lr_factor: float = LR_FACTOR
    lr_span: int = 1
    wd_center: float = None
    wd_factor: float = WD_FACTOR
    wd_span: int = 1
    beta1_halflife_center: float = None
    beta1_halflife_factor: float = BETA1_HALFLIFE_FACTOR
    beta1_span: int = 1
    beta2_halflife_center: float = None
    beta2_halflife_factor: float = BETA2_HALFLIFE_FACTOR
    beta2_span: int = 1

    def __post_init__(self):
        if self.lr_center <= 0:
            raise ValueError("lr_center must be positive")
        for nm in ("lr_factor", "wd_factor", "beta1_halflife_factor",
                   "beta2_halflife_factor"):
            if getattr(self, nm) <= 1.0:
                raise ValueError(f"{nm} must exceed 1")
        for nm in ("lr_span", "wd_span", "beta1_span", "beta2_span"):
            if getattr(self, nm) < 0:
                raise ValueError(f"{nm} must be nonnegative")
        if self.wd_center is not None and self.wd_center < 0:
            raise ValueError("wd_center must be nonnegative")
        for nm in ("beta1_halflife_center", "beta2_halflife_center"):
            c = getattr(self, nm)
            if c is not None and c <= 0:
                raise ValueError(f"{nm} must be positive")


def _axis_values(center, factor, span):
    if center == 0.0:
        return [0.0]
    return [center * factor ** k for k in range(-span, span + 1)]


def _axis_offsets(center, span):
    if center == 0.0:
        return [0]
    return list(range(-span, span + 1))


def enumerate_grid(grid, rule):
    """All hyperparameter combinations, lexicographic in axis order.

    Returns (combos, offsets): combos are dicts of rule-field overrides,
    offsets the matching integer grid coordinates, both ordered with lr
    varying slowest.
    """
    axes = [("lr", _axis_values(grid.lr_center, grid.lr_factor, grid.lr_span),
             _axis_offsets(grid.lr_center, grid.lr_span))]
    if grid.wd_center is not None:
        axes.append((
            "weight_decay",
            _axis_values(grid.wd_center, grid.wd_factor, grid.wd_span),
            _axis_offsets(grid.wd_center, grid.wd_span),
        ))
    if grid.beta1_halflife_center is not None:
        halflives = _axis_values(
            grid.beta1_halflife_center, grid.beta1_halflife_factor, grid.beta1_span
        )
        axes.append((
            "beta1",
            [halflife_to_beta(h) for h in halflives],
            _axis_offsets(grid.beta1_halflife_center, grid.beta1_span),
        ))
    if grid.beta2_halflife_center is not None and rule.uses_beta2:
        halflives = _axis_values(
            grid.beta2_halflife_center, grid.beta2_halflife_factor, grid.beta2_span
        )
        axes.append((
            "beta2",
            [halflife_to_beta(h) for h in halflives],
            _axis_offsets(grid.beta2_halflife_center, grid.beta2_span),
        ))
    names = [a[0] for a in axes]
    combos = []
    offsets = []
    for values in itertools.product(*(a[1] for a in axes)):
        combos.append(dict(zip(names, values)))
    for ks in itertools.product(*(a[2] for a in axes)):
        offsets.append(ks)
    return combos, offsets


@dataclass
class SweepResult:
    records: tuple
    offsets: tuple
    best_index: int
    locally_optimal: bool
    on_boundary: bool
    executed: int
    loaded: int

    @property
    def best_record(self):
        return None if self.best_index is None else self.records[self.best_index]

    def report(self):
        lines = [
            f"runs = {len(self.records)}",
            f"executed = {self.executed}",
            f"loaded = {self.loaded}",
        ]
        failed = sum(1 for r in self.records if r.status != STATUS_OK)
        lines.append(f"failed = {failed}")
        if self.best_index is None:
            lines.append("best = none (every run failed)")
        else:
            best = self.best_record
            lines.append(f"best_val_loss = {repr(best.final_val_loss)}")
            lines.append(f"best_lr = {repr(best.config.rule.lr)}")
            lines.append(f"best_wd = {repr(best.config.rule.weight_decay)}")
            lines.append(f"best_beta1 = {repr(best.config.rule.beta1)}")
            lines.append(f"best_beta2 = {repr(best.config.rule.beta2)}")
            lines.append(f"locally_optimal = {str(self.locally_optimal).lower()}")
            lines.append(f"on_grid_boundary = {str(self.on_boundary).lower()}")
        return "\n".join(lines) + "\n"


def _run_and_save(cfg, out_dir):
    save_record(train_run(cfg), out_dir)


def run_sweep(base_cfg, grid, out_dir, parallel=1):
    """Execute the grid around base_cfg, reusing records already on disk.

    Completed runs are recognized by their config-hash filename, so a
    rerun of a finished sweep trains nothing. Scheduling order never
    influences record contents; parallel N only changes wall time.
    """
    combos, offsets = enumerate_grid(grid, base_cfg.rule)
    cfgs = [with_rule(base_cfg, **combo) for combo in combos]
    todo = []
    claimed = set()
    for cfg in cfgs:
        path = record_path(out_dir, cfg)
        if not os.path.exists(path) and path not in claimed:
            todo.append(cfg)
            claimed.add(path)
    if todo:
        os.makedirs(out_dir, exist_ok=True)
        if parallel > 1:
            with ThreadPoolExecutor(max_workers=parallel) as pool:
                futures = [pool.submit(_run_and_save, c, out_dir) for c in todo]
                for f in futures:
                    f.result()
        else:
            for cfg in todo:
                _run_and_save(cfg, out_dir)
    records = tuple(load_record(record_path(out_dir, cfg)) for cfg in cfgs)

    best_index = None
    for i, rec in enumerate(records):
        if rec.status != STATUS_OK:
            continue
        if best_index is None or rec.final_val_loss < records[best_index].final_val_loss:
            best_index = i
    locally_optimal = False
    on_boundary = False
    if best_index is not None:
        by_offset = {o: i for i, o in enumerate(offsets)}
        best_offset = offsets[best_index]
        best_loss = records[best_index].final_val_loss
        locally_optimal = True
        spans = _active_spans(grid, base_cfg.rule)
        for axis, span in enumerate(spans):
            if span > 0 and abs(best_offset[axis]) == span:
                on_boundary = True
            for delta in (-1, 1):
                neighbor = list(best_offset)
                neighbor[axis] += delta
                j = by_offset.get(tuple(neighbor))
                if j is None or records[j].status != STATUS_OK:
                    continue
                if records[j].final_val_loss < best_loss:
                    locally_optimal = False
    return SweepResult(
        records=records,
        offsets=tuple(offsets),
        best_index=best_index,
        locally_optimal=locally_optimal,
        on_boundary=on_boundary,
        executed=len(todo),
        loaded=len(cfgs) - len(todo),
    )


def _active_spans(grid, rule):
    spans = [grid.lr_span if grid.lr_center != 0.0 else 0]
    if grid.wd_center is not None:
        spans.append(grid.wd_span if grid.wd_center != 0.0 else 0)
    if grid.beta1_halflife_center is not None:
        spans.append(grid.beta1_span)
    if grid.beta2_halflife_center is not None and rule.uses_beta2:
        spans.append(grid.beta2_span)
    return spans


# ---------------------------------------------------------------------------
# sweep config files: the run sections plus one [sweep] section

_SWEEP_FLOATS = (
    "lr_center", "lr_factor", "wd_center", "wd_factor",
    "beta1_halflife_center", "beta1_halflife_factor",
    "beta2_halflife_center", "beta2_halflife_factor",
)
_SWEEP_INTS = ("lr_span", "wd_span", "beta1_span", "beta2_span")


def parse_sweep_config(text):
    """Split a sweep file into (base RunConfig, SweepGrid)."""
    sections = _split_sections(text)
    unknown = set(sections) - {"workload", "rule", "run", "sweep"}
    if unknown:
        raise ValueError(f"unknown sections {sorted(unknown)}")
    if "sweep" not in sections:
        raise ValueError("sweep config needs a [sweep] section")
    raw = sections.pop("sweep")
    kw = {}
    for key, value in raw.items():
        if key in _SWEEP_FLOATS:
            kw[key] = float(value)
        elif key in _SWEEP_INTS:
            kw[key] = int(value)
        else:
            raise ValueError(f"unknown sweep key {key!r}")
    if "lr_center" not in kw:
        raise ValueError("sweep section must set lr_center")
    return config_from_sections(sections), SweepGrid(**kw)
