"""Frozen configs for the tuned desk-scale comparison suite.

Thirteen update rules, each swept over a span-1 learning-rate ring around a
hand-chosen center, all on the default transformer workload.  Records are
cached under .cache/acceptance at the repository root: the first invocation
trains every missing run (budget: under two hours of desktop CPU), later
invocations load from disk in seconds.  Centers were picked by coarse
half-decade ladders at 400 steps, then refined at full length; variants
inherit the center of the rule they ablate.
"""

from dataclasses import replace
from pathlib import Path

from whitenopt.config import make_config
from whitenopt.metrics import adam_equivalent_steps, default_budget_grid
from whitenopt.rules import (
    NormalizerKind,
    PostNormalizerKind,
    PreconditionSides,
    adafactor_style,
    adam,
    adamuon,
    lion_style,
    muon,
    signum,
    soap,
    splus,
)
from whitenopt.sweep import SweepGrid, run_sweep
from whitenopt.training import (
    STATUS_OK,
    load_record,
    record_path,
    save_record,
    train_run,
)
from whitenopt.workloads import tiny_lm_spec

CACHE = Path(__file__).resolve().parent.parent / ".cache" / "acceptance"
REFRESH = 20

# learning-rate centers, frozen after calibration on the default workload
ADAM_LR = 0.001
SIGNUM_LR = 0.000177
SOAP_LR = 0.00175
SPLUS_LR = 0.1
MUON_LR = 0.0077
ADAMUON_LR = 0.000312


def suite_rules():
    """Label -> rule spec at its tuned center."""
    eigen_sign = dict(refresh_interval=REFRESH, weight_decay=0.01, beta1=0.99, beta2=0.968)
    eigen_var = dict(refresh_interval=REFRESH, weight_decay=0.316, beta1=0.9, beta2=0.99)
    ns_var = dict(weight_decay=3.162, beta1=0.968, beta2=0.99)
    return {
        "adam": adam(lr=ADAM_LR, weight_decay=1.0, beta1=0.95, beta2=0.99),
        "signum": signum(lr=SIGNUM_LR, weight_decay=3.162, beta1=0.9),
        "lion": lion_style(lr=SIGNUM_LR, weight_decay=3.162, beta1=0.9),
        "adafactor": adafactor_style(lr=ADAM_LR, weight_decay=1.0, beta1=0.95, beta2=0.99),
        "soap": soap(lr=SOAP_LR, **eigen_var),
        "splus": splus(lr=SPLUS_LR, **eigen_sign),
        "eigen-lookahead": splus(lr=SPLUS_LR, **eigen_sign).replace(
            normalizer=NormalizerKind.SIGN_LOOKAHEAD
        ),
        "eigen-factorized": soap(lr=SOAP_LR, **eigen_var).replace(
            normalizer=NormalizerKind.VARIANCE_FACTORIZED
        ),
        "soap-input-only": soap(lr=SOAP_LR, **eigen_var).replace(
            precondition_sides=PreconditionSides.INPUT_ONLY
        ),
        "muon": muon(lr=MUON_LR, weight_decay=0.1, beta1=0.9),
        "ns-lookahead": muon(lr=MUON_LR, weight_decay=0.1, beta1=0.9).replace(
            normalizer=NormalizerKind.SIGN_LOOKAHEAD
        ),
        "adamuon": adamuon(lr=ADAMUON_LR, **ns_var),
        "ns-factorized": adamuon(lr=ADAMUON_LR, **ns_var).replace(
            post_normalizer=PostNormalizerKind.VARIANCE_FACTORIZED_ORIGINAL_BASIS
        ),
    }


def suite_results(out=None):
    """Run or load the whole suite; {label: SweepResult}."""
    out = CACHE if out is None else Path(out)
    workload = tiny_lm_spec()
    results = {}
    for label, rule in suite_rules().items():
        cfg = make_config(workload, rule, label=label)
        results[label] = run_sweep(cfg, SweepGrid(lr_center=rule.lr), out)
    return results


def all_records(results):
    return [r for res in results.values() for r in res.records]


def best_loss(results, label):
    record = results[label].best_record
    if record is None:
        raise AssertionError(f"every {label} run failed")
    return record.final_val_loss


def _cached_run(cfg, out):
    path = record_path(out, cfg)
    if path.exists():
        return load_record(path)
    record = train_run(cfg)
    save_record(record, out)
    return record


def equivalence_bracket(results, label, target, out=None, cap=None):
    """Bracket on the budget the tuned rule needs to reach a target loss.

    Each budget is an independent full run of the rule's tuned config with
    its schedule compressed or stretched to that length.  cap trims the
    budget grid to cap * total: a query whose target is attained by the
    full-length run itself never needs the longer budgets, and each one
    costs a whole training run."""
    out = CACHE if out is None else Path(out)
    best = results[label].best_record
    assert best is not None and best.status == STATUS_OK
    cfg = best.config
    total = cfg.workload.total_steps
    budgets = default_budget_grid(total)
    if cap is not None:
        budgets = tuple(b for b in budgets if b <= round(cap * total))

    def runner(budget):
        budget_cfg = replace(cfg, workload=replace(cfg.workload, total_steps=budget))
        return _cached_run(budget_cfg, out).final_val_loss

    return adam_equivalent_steps(target, budgets, runner, total)
