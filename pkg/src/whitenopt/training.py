"""Single training runs: grouping, schedule, divergence bookkeeping, records.

A run assigns the rule under test to the matrix parameter classes named
in the config and a fixed elementwise Adam to everything else, steps the
workload for total_steps with warmup-then-cosine learning rates, probes
spectral diagnostics on one parameter's update matrix, and serializes
the whole history as a line-oriented text record whose bytes depend only
on the config.
"""

import math
import os
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .config import PROBE_AUTO, PROBE_OFF, RunConfig, config_hash, config_text, parse_config
from .kernels import create_state, step
from .linalg import singular_value_spread
from .workloads import TINY_LM, make_workload

# the non-matrix groups always run under this fixed elementwise Adam;
# weight decay differs per class, everything else is shared
FIXED_ADAM_LR = 0.01
FIXED_ADAM_BETA1 = 0.9
FIXED_ADAM_BETA2 = 0.99
FIXED_ADAM_EPS = 1e-8
FIXED_ADAM_WD = {"embed": 0.0, "output_head": 0.001, "layernorm": 0.0}

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 50

STATUS_OK = "ok"
STATUS_FAILED = "failed"


def lr_at(i, peak, total, warmup):
    """Learning rate for 0-indexed step i: linear warmup, cosine to zero.

    lr_at(total, ...) is exactly 0, the mathematical endpoint; the last
    step actually taken is i = total - 1.
    """
    if i < warmup:
        return peak * (i + 1) / warmup
    frac = (i - warmup) / (total - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * frac))


class FixedAdam:
    """Elementwise Adam with pinned hyperparameters, any tensor shape."""

    def __init__(self, shape, weight_decay):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.weight_decay = weight_decay

    def apply(self, grad, param, lr_now):
        self.t += 1
        self.m *= FIXED_ADAM_BETA1
        self.m += (1.0 - FIXED_ADAM_BETA1) * grad
        self.v *= FIXED_ADAM_BETA2
        self.v += (1.0 - FIXED_ADAM_BETA2) * grad * grad
        mhat = self.m / (1.0 - FIXED_ADAM_BETA1 ** self.t)
        vhat = self.v / (1.0 - FIXED_ADAM_BETA2 ** self.t)
        param -= lr_now * (
            mhat / (np.sqrt(vhat) + FIXED_ADAM_EPS)
            + self.weight_decay * param
        )


@dataclass
class RunRecord:
    """Full history of one run plus its identity."""

    config: RunConfig
    rows: list  # (step, lr, train_loss, max_sv or None, mean_sv or None)
    final_val_loss: float
    status: str

    def final_train_loss(self):
        return self.rows[-1][2] if self.rows else math.nan


def resolve_probe(cfg):
    if cfg.probe_param == PROBE_OFF:
        return None
    if cfg.probe_param != PROBE_AUTO:
        return cfg.probe_param
    return "block0.mlp_in" if cfg.workload.kind == TINY_LM else "quadratic"


def train_run(cfg, param_sink=None):
    """Execute one run to completion (or divergence) and return its record.

    param_sink, if given a dict, receives the final parameter tensors;
    tests use it to observe group isolation. BLAS is pinned to one
    thread so records are identical under any sweep parallelism.
    """
    with threadpool_limits(limits=1):
        record = _train_run_inner(cfg, param_sink)
    return record


def _train_run_inner(cfg, param_sink):
    wl = make_workload(cfg.workload)
    spec = cfg.rule
    total = cfg.workload.total_steps
    warmup = cfg.workload.warmup_steps
    params = wl.init_params(cfg.workload.seed)

    matrix_states = {}
    fixed_states = {}
    for name in sorted(params):
        cls = wl.param_class(name)
        ruled = cls == "quadratic" or cls in cfg.groups
        if ruled and params[name].ndim == 2:
            rows_, cols_ = params[name].shape
            matrix_states[name] = create_state(spec, rows_, cols_)
        else:
            fixed_states[name] = FixedAdam(
                params[name].shape, FIXED_ADAM_WD.get(cls, 0.0)
            )

    probe = resolve_probe(cfg)
    if probe is not None and probe not in matrix_states:
        raise ValueError(
            f"probe parameter {probe!r} is not under the matrix rule"
        )

    rows = []
    status = STATUS_OK
    init_loss = None
    over = 0
    try:
        for i in range(total):
            batch = wl.next_batch(i)
            loss, grads = wl.loss_and_grads(params, batch)
            if init_loss is None:
                init_loss = loss
            lr_now = lr_at(i, spec.lr, total, warmup)
            fixed_lr = lr_at(i, FIXED_ADAM_LR, total, warmup)
            max_sv = mean_sv = None
            for name, st in matrix_states.items():
                update = step(spec, st, grads[name], params[name], lr_now, name)
                if name == probe and i % cfg.probe_stride == 0:
                    max_sv, mean_sv = singular_value_spread(update)
            for name, st in fixed_states.items():
                st.apply(grads[name], params[name], fixed_lr)
            rows.append((i, lr_now, loss, max_sv, mean_sv))
            if loss > DIVERGENCE_FACTOR * init_loss:
                over += 1
                if over >= DIVERGENCE_PATIENCE:
                    status = STATUS_FAILED
                    break
            else:
                over = 0
    except FloatingPointError:
        status = STATUS_FAILED

    if status == STATUS_OK:
        final_val = wl.validation_loss(params)
    else:
        final_val = math.nan
    if param_sink is not None:
        param_sink.update(params)
    return RunRecord(cfg, rows, final_val, status)


# ---------------------------------------------------------------------------
# record file format: config header, CSV step table, result footer

_CSV_HEADER = "step,lr,train_loss,max_sv,mean_sv"


def _cell(v):
    return "" if v is None else repr(v)


def record_text(record):
    lines = [config_text(record.config).rstrip("\n"), "", "[steps]", _CSV_HEADER]
    for i, lr, loss, mx, mn in record.rows:
        lines.append(f"{i},{repr(lr)},{repr(loss)},{_cell(mx)},{_cell(mn)}")
    lines.append("")
    lines.append("[result]")
    lines.append(f"final_val_loss = {repr(record.final_val_loss)}")
    lines.append(f"status = {record.status}")
    return "\n".join(lines) + "\n"


def record_path(out_dir, cfg):
    return os.path.join(out_dir, config_hash(cfg) + ".txt")


def save_record(record, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = record_path(out_dir, record.config)
    with open(path, "w") as fh:
        fh.write(record_text(record))
    return path


def load_record(path):
    with open(path) as fh:
        text = fh.read()
    lines = text.splitlines()
    try:
        steps_at = lines.index("[steps]")
        result_at = lines.index("[result]")
    except ValueError:
        raise ValueError(f"{path}: missing [steps] or [result] section")
    cfg = parse_config("\n".join(lines[:steps_at]))
    if lines[steps_at + 1] != _CSV_HEADER:
        raise ValueError(f"{path}: unexpected step table header")
    rows = []
    for line in lines[steps_at + 2 : result_at]:
        if not line:
            continue
        i, lr, loss, mx, mn = line.split(",")
        rows.append(
            (
                int(i),
                float(lr),
                float(loss),
                float(mx) if mx else None,
                float(mn) if mn else None,
            )
        )
    footer = {}
    for line in lines[result_at + 1 :]:
        if not line:
            continue
        key, _, raw = line.partition("=")
        footer[key.strip()] = raw.strip()
    return RunRecord(cfg, rows, float(footer["final_val_loss"]), footer["status"])
