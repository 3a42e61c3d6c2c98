"""Cross-run analysis: spectral spread, step-equivalence brackets,
and the basis-family x normalizer ablation table.

Everything here is a pure function of immutable run records; input
order never affects output.
"""

import math
from dataclasses import dataclass

from .rules import BasisKind, NormalizerKind, PostNormalizerKind
from .training import STATUS_OK

FAMILY_ELEMENTWISE = "elementwise"
FAMILY_SHAMPOO = "shampoo_basis"
FAMILY_NEWTON_SCHULZ = "newton_schulz"
FAMILIES = (FAMILY_ELEMENTWISE, FAMILY_SHAMPOO, FAMILY_NEWTON_SCHULZ)

VARIANT_SIGN = "sign"
VARIANT_SIGN_LOOKAHEAD = "sign_lookahead"
VARIANT_VARIANCE_TIED = "variance_tied"
VARIANT_VARIANCE_FACTORIZED = "variance_factorized"
VARIANT_VARIANCE_FULL = "variance_full"
VARIANTS = (
    VARIANT_SIGN,
    VARIANT_SIGN_LOOKAHEAD,
    VARIANT_VARIANCE_TIED,
    VARIANT_VARIANCE_FACTORIZED,
    VARIANT_VARIANCE_FULL,
)


# ---------------------------------------------------------------------------
# spectral spread


@dataclass(frozen=True)
class SpreadSeries:
    """Probe history of one run: singular-value spread of the update."""

    steps: tuple
    max_sv: tuple
    mean_sv: tuple

    def __post_init__(self):
        if not len(self.steps) == len(self.max_sv) == len(self.mean_sv):
            raise ValueError("spread series columns must align")

    @property
    def ratios(self):
        return tuple(mx / mn for mx, mn in zip(self.max_sv, self.mean_sv))

    def median_ratio(self):
        return _median(self.ratios)


def _median(values):
    if not values:
        return math.nan
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2:
        return ordered[mid]
    return 0.5 * (ordered[mid - 1] + ordered[mid])


def spread_series(record):
    probed = [(i, mx, mn) for i, _, _, mx, mn in record.rows if mx is not None]
    return SpreadSeries(
        steps=tuple(p[0] for p in probed),
        max_sv=tuple(p[1] for p in probed),
        mean_sv=tuple(p[2] for p in probed),
    )


def record_group(record):
    """Grouping key for cross-run summaries: the label, or a derived name."""
    if record.config.label:
        return record.config.label
    rule = record.config.rule
    return f"{family_of(rule)}/{variant_of(rule)}"


def spread_summary(records):
    """Median max/mean singular-value ratio per optimizer group.

    Ratios from all probe steps of all of a group's finished runs are
    pooled before taking the median, so one long and two short runs
    weigh by probe count, not by run count.
    """
    pooled = {}
    for rec in records:
        if rec.status != STATUS_OK:
            continue
        pooled.setdefault(record_group(rec), []).extend(spread_series(rec).ratios)
    return {
        group: _median(ratios)
        for group, ratios in sorted(pooled.items())
        if ratios
    }


def spread_table(records):
    summary = spread_summary(records)
    lines = ["group,median_spread_ratio"]
    for group, ratio in summary.items():
        lines.append(f"{group},{repr(ratio)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# step-count equivalence


@dataclass(frozen=True)
class AdamEquivalence:
    """Bracket on the budget the reference optimizer needs to hit a target.

    budgets are absolute step counts; equivalent_range is expressed as
    fractions of the reference run length (lower, upper), the interval
    known to contain the minimal sufficient budget. lower = 0.0 means
    even the smallest budget sufficed; upper = inf means no budget did.
    """

    target_loss: float
    budgets: tuple
    losses_at_budget: tuple
    equivalent_range: tuple

    def speedup_range(self):
        """The reported total/T form: how many times fewer steps suffice."""
        lo, hi = self.equivalent_range
        return (
            1.0 / hi if hi not in (0.0, math.inf) else 0.0,
            1.0 / lo if lo > 0.0 else math.inf,
        )


def adam_equivalent_steps(target_loss, budget_grid, runner, total_steps):
    """Find the bracketing budgets around the minimal one reaching target.

    runner(budget) must return the best (already lr-tuned) final loss the
    reference optimizer achieves in that many steps; it is called once
    per budget in ascending order. Failed budgets may return nan, which
    never satisfies the target.
    """
    budgets = tuple(int(b) for b in budget_grid)
    if not budgets or any(b <= 0 for b in budgets):
        raise ValueError("budgets must be positive")
    if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError("budgets must be strictly increasing")
    losses = tuple(float(runner(b)) for b in budgets)
    hit = None
    for i, loss in enumerate(losses):
        if loss <= target_loss:
            hit = i
            break
    if hit is None:
        rng = (budgets[-1] / total_steps, math.inf)
    elif hit == 0:
        rng = (0.0, budgets[0] / total_steps)
    else:
        rng = (budgets[hit - 1] / total_steps, budgets[hit] / total_steps)
    return AdamEquivalence(target_loss, budgets, losses, rng)


def default_budget_grid(total_steps):
    """Budgets 0.5x .. 1.5x of the reference run, eleven points."""
    return tuple(round(total_steps * k / 10) for k in range(5, 16))


# ---------------------------------------------------------------------------
# ablation table


def family_of(rule):
    if rule.basis is BasisKind.NEWTON_SCHULZ:
        return FAMILY_NEWTON_SCHULZ
    if rule.basis is BasisKind.SHAMPOO_EIGENBASIS or rule.kronecker_direct:
        return FAMILY_SHAMPOO
    return FAMILY_ELEMENTWISE


def variant_of(rule):
    """Normalizer variant, post-normalizer slot taking precedence."""
    if rule.kronecker_direct:
        return None  # the direct rule sits outside the pipeline grid
    post = rule.post_normalizer
    if post is PostNormalizerKind.VARIANCE_FULL_ORIGINAL_BASIS:
        kind = NormalizerKind.VARIANCE_FULL
    elif post is PostNormalizerKind.VARIANCE_FACTORIZED_ORIGINAL_BASIS:
        kind = NormalizerKind.VARIANCE_FACTORIZED
    else:
        kind = rule.normalizer
    if kind is NormalizerKind.SIGN:
        return VARIANT_SIGN
    if kind is NormalizerKind.SIGN_LOOKAHEAD:
        return VARIANT_SIGN_LOOKAHEAD
    if kind is NormalizerKind.VARIANCE_FACTORIZED:
        return VARIANT_VARIANCE_FACTORIZED
    if rule.beta1 == rule.beta2:
        return VARIANT_VARIANCE_TIED
    return VARIANT_VARIANCE_FULL


CELL_ABSENT = "absent"
CELL_FAILED = "failed"


def ablation_cells(records):
    """(family, variant) -> best finished record, or a status marker.

    Cells no record maps to come back as 'absent'; cells whose every
    run diverged come back as 'failed'. Direct-Kronecker records do not
    participate (they have no pipeline slot assignment).
    """
    cells = {(f, v): CELL_ABSENT for f in FAMILIES for v in VARIANTS}
    for rec in _sorted_records(records):
        variant = variant_of(rec.config.rule)
        if variant is None:
            continue
        key = (family_of(rec.config.rule), variant)
        if rec.status != STATUS_OK:
            if cells[key] == CELL_ABSENT:
                cells[key] = CELL_FAILED
            continue
        best = cells[key]
        if isinstance(best, str) or rec.final_val_loss < best.final_val_loss:
            cells[key] = rec
    return cells


def _sorted_records(records):
    # deterministic iteration regardless of caller ordering
    return sorted(records, key=lambda r: (record_group(r), _config_sort_key(r)))


def _config_sort_key(rec):
    rule = rec.config.rule
    return (rule.lr, rule.weight_decay, rule.beta1, rule.beta2, rec.config.label)


def ablation_table(records):
    """CSV: one row per (family, variant) with best loss and winning scalars."""
    cells = ablation_cells(records)
    lines = ["family,variant,final_val_loss,lr,weight_decay,beta1,beta2"]
    for family in FAMILIES:
        for variant in VARIANTS:
            cell = cells[(family, variant)]
            if isinstance(cell, str):
                lines.append(f"{family},{variant},{cell},,,,")
            else:
                rule = cell.config.rule
                lines.append(
                    f"{family},{variant},{repr(cell.final_val_loss)},"
                    f"{repr(rule.lr)},{repr(rule.weight_decay)},"
                    f"{repr(rule.beta1)},{repr(rule.beta2)}"
                )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# error bands and group bests


def best_by_group(records):
    """Lowest final validation loss per group, finished runs only."""
    best = {}
    for rec in _sorted_records(records):
        if rec.status != STATUS_OK:
            continue
        group = record_group(rec)
        if group not in best or rec.final_val_loss < best[group].final_val_loss:
            best[group] = rec
    return best


def lr_error_band(records, group):
    """Loss margin at the sweep's lr resolution for one group.

    The band is the largest loss change from the group's best run to an
    adjacent-lr run identical in every other scalar, mirroring the
    convention of quoting the difference within the smallest search
    resolution. Returns 0.0 when no lr neighbor exists.
    """
    runs = [
        r
        for r in records
        if r.status == STATUS_OK and record_group(r) == group
    ]
    if not runs:
        return math.nan
    best = min(runs, key=lambda r: (r.final_val_loss, _config_sort_key(r)))
    siblings = [
        r
        for r in runs
        if r is not best
        and r.config.rule == best.config.rule.replace(lr=r.config.rule.lr)
    ]
    if not siblings:
        return 0.0
    gaps = sorted(
        siblings,
        key=lambda r: abs(math.log(r.config.rule.lr / best.config.rule.lr)),
    )
    nearest = gaps[0]
    log_gap = abs(math.log(nearest.config.rule.lr / best.config.rule.lr))
    band = 0.0
    for r in gaps:
        if abs(math.log(r.config.rule.lr / best.config.rule.lr)) <= log_gap * 1.0000001:
            band = max(band, abs(r.final_val_loss - best.final_val_loss))
    return band


def summary_table(records):
    """CSV of per-group best runs with their error bands."""
    best = best_by_group(records)
    lines = ["group,final_val_loss,error_band,lr,weight_decay,beta1,beta2,status"]
    for group, rec in sorted(best.items()):
        rule = rec.config.rule
        band = lr_error_band(records, group)
        lines.append(
            f"{group},{repr(rec.final_val_loss)},{repr(band)},{repr(rule.lr)},"
            f"{repr(rule.weight_decay)},{repr(rule.beta1)},{repr(rule.beta2)},ok"
        )
    # groups that never finished still deserve a row
    seen = set(best)
    failed = sorted(
        {record_group(r) for r in records if record_group(r) not in seen}
    )
    for group in failed:
        lines.append(f"{group},nan,nan,,,,,failed")
    return "\n".join(lines) + "\n"
