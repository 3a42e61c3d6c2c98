"""Built-in self-checks for the core algebra.

Each check recomputes a claimed identity through two independent routes
and compares at a stated tolerance, so a packaging or numeric regression
surfaces from an installed copy without the test suite.  `run_verification`
prints one line per check and returns the number of failures.
"""

from __future__ import annotations

import numpy as np

from .config import make_config
from .kernels import create_state, step
from .linalg import (
    brute_force_whiten,
    matrix_power_sym,
    newton_schulz_orthogonalize,
    svd_orthogonalize,
)
from .rules import (
    PreconditionSides,
    adafactor_style,
    adam,
    adamuon,
    lion_style,
    memory_footprint_reals,
    muon,
    shampoo,
    signum,
    soap,
    spa,
    splus,
)
from .sweep import beta_to_halflife, halflife_to_beta
from .training import lr_at, record_text, train_run
from .workloads import noisy_quadratic_spec


def _rel(got, want):
    return float(np.linalg.norm(got - want) / np.linalg.norm(want))


def _frozen_identity(spec, rows, cols):
    state = create_state(spec, rows, cols)
    state.basis_left = np.eye(rows)
    state.basis_right = np.eye(cols)
    state.last_refresh_step = 1
    return state


def _check_whitening_routes():
    """(GG^T)^-1/4 G (G^T G)^-1/4, both half-power forms, and U V^T agree."""
    rng = np.random.default_rng(31)
    worst = 0.0
    for shape in ((6, 4), (5, 5), (4, 7)):
        g = rng.standard_normal(shape)
        uv = svd_orthogonalize(g)
        quarter = matrix_power_sym(g @ g.T, -0.25, eps=0.0) @ g @ matrix_power_sym(
            g.T @ g, -0.25, eps=0.0
        )
        left = matrix_power_sym(g @ g.T, -0.5, eps=0.0) @ g
        right = g @ matrix_power_sym(g.T @ g, -0.5, eps=0.0)
        for got in (quarter, left, right):
            worst = max(worst, _rel(got, uv))
    return worst <= 1e-6, f"max rel err {worst:.2e}, tol 1e-6"


def _check_newton_schulz():
    rng = np.random.default_rng(32)
    worst = 0.0
    for shape in ((8, 5), (6, 6)):
        g = rng.standard_normal(shape)
        got = newton_schulz_orthogonalize(g, iters=10)
        worst = max(worst, _rel(got, svd_orthogonalize(g)))
    return worst <= 1e-2, f"max rel err {worst:.2e}, tol 1e-2"


def _identity_basis_gap(eigen_spec, plain_spec, rows, cols, steps):
    rng = np.random.default_rng(33)
    state_e = _frozen_identity(eigen_spec, rows, cols)
    state_p = create_state(plain_spec, rows, cols)
    param = np.zeros((rows, cols))
    worst = 0.0
    for _ in range(steps):
        g = rng.standard_normal((rows, cols))
        u_e = step(eigen_spec, state_e, g, param, 0.1)
        u_p = step(plain_spec, state_p, g, param, 0.1)
        worst = max(worst, float(np.max(np.abs(u_e - u_p))))
    return worst


def _check_soap_identity_is_adam():
    spec = soap(refresh_interval=1000)
    worst = _identity_basis_gap(spec, adam(beta2=spec.beta2), 6, 4, 40)
    return worst <= 1e-12, f"max abs gap {worst:.2e}, tol 1e-12"


def _check_splus_identity_is_signum():
    worst = _identity_basis_gap(splus(refresh_interval=1000), signum(), 5, 5, 40)
    return worst <= 1e-12, f"max abs gap {worst:.2e}, tol 1e-12"


def _check_snr_identity():
    """Tied betas, eps 0, no bias correction: update = sign(m)/sqrt(1+sigma^2/m^2)."""
    rng = np.random.default_rng(34)
    beta = 0.9
    spec = adam(beta1=beta, beta2=beta, eps=0.0, bias_correction=False)
    state = create_state(spec, 3, 7)
    param = np.zeros((3, 7))
    m = np.zeros((3, 7))
    e = np.zeros((3, 7))
    worst = 0.0
    for _ in range(30):
        g = rng.standard_normal((3, 7))
        u = step(spec, state, g, param, 0.1)
        e = beta * e + (1.0 - beta) * (m - g) ** 2
        m = beta * m + (1.0 - beta) * g
        want = np.sign(m) / np.sqrt(1.0 + beta * e / (m * m))
        worst = max(worst, float(np.max(np.abs(u - want))))
    return worst <= 1e-10, f"max abs gap {worst:.2e}, tol 1e-10"


def _check_kronecker_vs_brute_force():
    rng = np.random.default_rng(35)
    spec = shampoo(refresh_interval=1, beta2=0.5, matrix_power_eps=1e-12)
    state = create_state(spec, 3, 2)
    param = np.zeros((3, 2))
    u = np.zeros((3, 2))
    for _ in range(4):
        u = step(spec, state, rng.standard_normal((3, 2)), param, spec.lr)
    correction = 1.0 - 0.5**4
    left = matrix_power_sym(state.factor_left / correction, 0.5, eps=0.0)
    right = matrix_power_sym(state.factor_right / correction, 0.5, eps=0.0)
    mhat = state.momentum / (1.0 - spec.beta1**4)
    want = brute_force_whiten(mhat.reshape(-1), np.kron(left, right)).reshape(3, 2)
    cosine = np.sum(u * want) / np.sqrt(np.sum(u * u) * np.sum(want * want))
    angle = float(np.arccos(np.clip(cosine, -1.0, 1.0)))
    return angle <= 1e-3, f"angle {angle:.2e} rad, tol 1e-3"


def _check_memory_accounting():
    """Reported footprint equals parameter size plus allocated buffers."""
    factories = (
        adam,
        signum,
        lion_style,
        adafactor_style,
        splus,
        soap,
        muon,
        adamuon,
        shampoo,
        spa,
    )
    bad = []
    for rows, cols in ((9, 9), (6, 10)):
        for factory in factories:
            spec = factory()
            want = rows * cols + create_state(spec, rows, cols).persistent_reals()
            if memory_footprint_reals(spec, rows, cols) != want:
                bad.append(factory.__name__)
        one_sided = soap().replace(precondition_sides=PreconditionSides.INPUT_ONLY)
        want = rows * cols + create_state(one_sided, rows, cols).persistent_reals()
        if memory_footprint_reals(one_sided, rows, cols) != want:
            bad.append("soap_input_only")
    if bad:
        return False, "mismatch for " + ", ".join(sorted(set(bad)))
    return True, "10 rules + one-sided, square and rectangular"


def _check_run_determinism():
    cfg = make_config(
        noisy_quadratic_spec(dim=3, total_steps=40, warmup_steps=4),
        adam(lr=0.1),
        probe_stride=10,
    )
    first = record_text(train_run(cfg))
    second = record_text(train_run(cfg))
    if first != second:
        return False, "two runs of one config produced different records"
    return True, "repeated run byte-identical"


def _check_schedule_endpoints():
    peak, total, warmup = 0.3, 200, 20
    bad = []
    if lr_at(0, peak, total, warmup) != peak / warmup:
        bad.append("first step")
    if lr_at(warmup, peak, total, warmup) != peak:
        bad.append("end of warmup")
    if abs(lr_at(total, peak, total, warmup)) > 1e-18:
        bad.append("final step")
    if bad:
        return False, "wrong value at " + ", ".join(bad)
    return True, "warmup ramp and cosine tail hit exact endpoints"


def _check_halflife_roundtrip():
    worst = 0.0
    for h in (0.5, 1.0, 6.5788, 100.0, 2300.0):
        beta = halflife_to_beta(h)
        worst = max(worst, abs(beta_to_halflife(beta) - h) / h)
    if halflife_to_beta(1.0) != 0.5:
        return False, "halflife 1 did not map to beta 0.5"
    return worst <= 1e-12, f"max rel err {worst:.2e}, tol 1e-12"


CHECKS = (
    ("whitening-four-routes", _check_whitening_routes),
    ("newton-schulz-vs-svd", _check_newton_schulz),
    ("soap-identity-basis-is-adam", _check_soap_identity_is_adam),
    ("splus-identity-basis-is-signum", _check_splus_identity_is_signum),
    ("tied-beta-snr-identity", _check_snr_identity),
    ("kronecker-vs-brute-force", _check_kronecker_vs_brute_force),
    ("memory-accounting", _check_memory_accounting),
    ("run-determinism", _check_run_determinism),
    ("schedule-endpoints", _check_schedule_endpoints),
    ("halflife-roundtrip", _check_halflife_roundtrip),
)


def run_verification(out=print) -> int:
    """Run every check, emit one line each, return the failure count."""
    failures = 0
    for name, fn in CHECKS:
        ok, detail = fn()
        if not ok:
            failures += 1
        out(f"{'ok  ' if ok else 'FAIL'} {name}: {detail}")
    out(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return failures
