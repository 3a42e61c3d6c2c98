"""Sweep machinery: half-life algebra, grid enumeration, resumable and
parallel execution with failed-run bookkeeping."""

import math
import os

import numpy as np
import pytest

from whitenopt.config import RunConfig, config_text
from whitenopt.rules import adam, signum
from whitenopt.sweep import (
    SweepGrid,
    beta_to_halflife,
    enumerate_grid,
    halflife_to_beta,
    parse_sweep_config,
    run_sweep,
)
from whitenopt.training import STATUS_OK, record_text
from whitenopt.workloads import noisy_quadratic_spec


def quad_cfg(rule, total=60, warmup=5):
    spec = noisy_quadratic_spec(
        dim=2, curvature_spectrum=(1.0, 10.0), total_steps=total, warmup_steps=warmup
    )
    return RunConfig(workload=spec, rule=rule, probe_param="off")


# ---------------------------------------------------------------------------
# half-life parameterization


def test_halflife_closed_forms():
    assert halflife_to_beta(1.0) == 0.5
    h = beta_to_halflife(0.9)
    assert abs(h - math.log(0.5) / math.log(0.9)) < 1e-15
    assert abs(h - 6.5788) < 1e-3
    assert abs(halflife_to_beta(h) - 0.9) < 1e-12


def test_halflife_roundtrip_and_log_scaling():
    rng = np.random.default_rng(77)
    for h in rng.uniform(0.5, 5000.0, 40):
        beta = halflife_to_beta(h)
        assert abs(beta_to_halflife(beta) - h) < 1e-9 * h
        # h * c divides ln(beta) by c exactly
        scaled = halflife_to_beta(h * 10 ** 0.25)
        assert abs(math.log(scaled) - math.log(beta) / 10 ** 0.25) < 1e-15


def test_halflife_domain_errors():
    with pytest.raises(ValueError):
        halflife_to_beta(0.0)
    with pytest.raises(ValueError):
        beta_to_halflife(1.0)
    with pytest.raises(ValueError):
        beta_to_halflife(0.0)


# ---------------------------------------------------------------------------
# grid enumeration


def full_grid():
    return SweepGrid(
        lr_center=0.001,
        wd_center=1.0,
        beta1_halflife_center=7.0,
        beta2_halflife_center=70.0,
    )


def test_grid_sizes_and_axis_dropping():
    combos, offsets = enumerate_grid(full_grid(), adam())
    assert len(combos) == 81 and len(offsets) == 81
    assert set(combos[0]) == {"lr", "weight_decay", "beta1", "beta2"}
    # sign rules own no beta2 buffer, so that axis vanishes
    combos_sign, _ = enumerate_grid(full_grid(), signum())
    assert len(combos_sign) == 27
    assert "beta2" not in combos_sign[0]


def test_grid_lr_values_match_eighth_decade():
    combos, _ = enumerate_grid(SweepGrid(lr_center=0.001), adam())
    lrs = sorted({c["lr"] for c in combos})
    assert abs(lrs[0] - 0.000750) < 1e-6
    assert abs(lrs[1] - 0.001) < 1e-12
    assert abs(lrs[2] - 0.001334) < 1e-6


def test_grid_is_lexicographic():
    combos, offsets = enumerate_grid(full_grid(), adam())
    assert offsets[0] == (-1, -1, -1, -1)
    assert offsets[-1] == (1, 1, 1, 1)
    assert offsets.index((0, 0, 0, 0)) == 40  # dead center of 81
    # lr varies slowest
    assert combos[0]["lr"] == combos[26]["lr"] != combos[27]["lr"]


def test_grid_inactive_and_zero_axes():
    combos, _ = enumerate_grid(SweepGrid(lr_center=0.01), adam())
    assert set(combos[0]) == {"lr"} and len(combos) == 3
    combos, _ = enumerate_grid(SweepGrid(lr_center=0.01, wd_center=0.0), adam())
    assert len(combos) == 3 and all(c["weight_decay"] == 0.0 for c in combos)
    combos, _ = enumerate_grid(
        SweepGrid(lr_center=0.01, lr_span=0, wd_center=0.1, wd_span=2), adam()
    )
    assert len(combos) == 5


def test_grid_validation():
    with pytest.raises(ValueError):
        SweepGrid(lr_center=0.0)
    with pytest.raises(ValueError):
        SweepGrid(lr_center=0.1, lr_factor=1.0)
    with pytest.raises(ValueError):
        SweepGrid(lr_center=0.1, lr_span=-1)
    with pytest.raises(ValueError):
        SweepGrid(lr_center=0.1, beta1_halflife_center=0.0)


# ---------------------------------------------------------------------------
# execution


def test_sweep_runs_resumes_and_picks_best(tmp_path):
    out = tmp_path / "records"
    base = quad_cfg(adam(lr=0.1))
    grid = SweepGrid(lr_center=0.1)
    res = run_sweep(base, grid, str(out))
    assert res.executed == 3 and res.loaded == 0
    assert len(os.listdir(out)) == 3
    losses = [r.final_val_loss for r in res.records]
    assert res.best_record.final_val_loss == min(losses)

    again = run_sweep(base, grid, str(out))
    assert again.executed == 0 and again.loaded == 3
    assert again.best_index == res.best_index
    assert record_text(again.best_record) == record_text(res.best_record)


def test_parallel_matches_serial(tmp_path):
    base = quad_cfg(adam(lr=0.05), total=40, warmup=4)
    grid = SweepGrid(lr_center=0.05)
    serial = run_sweep(base, grid, str(tmp_path / "serial"), parallel=1)
    threaded = run_sweep(base, grid, str(tmp_path / "par"), parallel=3)
    for a, b in zip(serial.records, threaded.records):
        assert record_text(a) == record_text(b)


def test_local_optimum_declaration_is_sound(tmp_path):
    base = quad_cfg(adam(lr=0.1), total=120, warmup=10)
    grid = SweepGrid(lr_center=0.1, lr_span=2)
    res = run_sweep(base, grid, str(tmp_path))
    best = res.best_record.final_val_loss
    if res.locally_optimal:
        i = res.best_index
        for j, off in enumerate(res.offsets):
            if abs(off[0] - res.offsets[i][0]) == 1 and res.records[j].status == STATUS_OK:
                assert res.records[j].final_val_loss >= best


def test_failed_runs_are_excluded_from_argmin(tmp_path):
    # top of this lr ladder diverges by the 10x-for-50-steps rule
    base = quad_cfg(signum(lr=10.0), total=80, warmup=5)
    grid = SweepGrid(lr_center=10.0, lr_factor=10.0)
    res = run_sweep(base, grid, str(tmp_path))
    statuses = [r.status for r in res.records]
    assert "failed" in statuses and STATUS_OK in statuses
    assert res.best_record.status == STATUS_OK
    assert res.best_record.final_val_loss == min(
        r.final_val_loss for r in res.records if r.status == STATUS_OK
    )


def test_all_failed_grid_reports_no_best(tmp_path):
    base = quad_cfg(adam(lr=1e200), total=60, warmup=5)
    grid = SweepGrid(lr_center=1e200, lr_span=1)
    res = run_sweep(base, grid, str(tmp_path))
    assert res.best_index is None and res.best_record is None
    assert "every run failed" in res.report()


def test_boundary_flag(tmp_path):
    # center far below useful lr: the best run sits on the grid edge
    base = quad_cfg(adam(lr=1e-4), total=60, warmup=5)
    grid = SweepGrid(lr_center=1e-4)
    res = run_sweep(base, grid, str(tmp_path))
    assert res.offsets[res.best_index][0] == 1
    assert res.on_boundary


# ---------------------------------------------------------------------------
# sweep config files


def test_parse_sweep_config_roundtrip():
    base = quad_cfg(adam(lr=0.1))
    text = config_text(base) + (
        "\n[sweep]\nlr_center = 0.1\nlr_span = 2\nwd_center = 0.5\n"
    )
    cfg, grid = parse_sweep_config(text)
    assert cfg == base
    assert grid.lr_center == 0.1 and grid.lr_span == 2
    assert grid.wd_center == 0.5
    assert grid.beta1_halflife_center is None


def test_parse_sweep_config_errors():
    ok = "[workload]\nkind = tiny_lm\n[sweep]\nlr_center = 0.1\n"
    parse_sweep_config(ok)
    with pytest.raises(ValueError):
        parse_sweep_config("[workload]\nkind = tiny_lm\n")
    with pytest.raises(ValueError):
        parse_sweep_config(ok + "mystery = 1\n")
    with pytest.raises(ValueError):
        parse_sweep_config("[workload]\nkind = tiny_lm\n[sweep]\nlr_span = 1\n")
