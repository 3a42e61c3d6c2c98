"""Optimizer state and the shared step pipeline.

One OptimState per parameter holds exactly the buffers its rule demands.
`step` advances momentum, dispatches to the family-specific update, applies
any post-normalizer, then applies the update with decoupled weight decay:
param <- param - lr_now * (U + weight_decay * param).  It returns the raw
update U so callers can probe its spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import matrix_power_sym, newton_schulz_orthogonalize, sym_eigh
from .rules import (
    BasisKind,
    NormalizerKind,
    PostNormalizerKind,
    SIGN_KINDS,
    UpdateRuleSpec,
    active_sides,
)


@dataclass
class OptimState:
    """Mutable per-parameter buffers.

    variance_full / variance_row / variance_col serve whichever slot the
    rule put its variance in (normalizer or post-normalizer); rule
    validation forbids demanding both.  basis_* and precond_* are derived
    caches, recomputable from the factor EMAs.
    """

    momentum: np.ndarray
    variance_full: np.ndarray | None = None
    variance_row: np.ndarray | None = None
    variance_col: np.ndarray | None = None
    factor_left: np.ndarray | None = None
    factor_right: np.ndarray | None = None
    basis_left: np.ndarray | None = None
    basis_right: np.ndarray | None = None
    precond_left: np.ndarray | None = None
    precond_right: np.ndarray | None = None
    last_refresh_step: int = 0
    step_count: int = 0

    def persistent_reals(self) -> int:
        """Allocated persistent buffer sizes, excluding derived caches."""
        total = self.momentum.size
        for buf in (
            self.variance_full,
            self.variance_row,
            self.variance_col,
            self.factor_left,
            self.factor_right,
        ):
            if buf is not None:
                total += buf.size
        return total


def create_state(spec: UpdateRuleSpec, rows: int, cols: int) -> OptimState:
    if rows < 1 or cols < 1:
        raise ValueError(f"parameter dims must be positive, got {rows}x{cols}")
    state = OptimState(momentum=np.zeros((rows, cols)))
    if spec.has_variance_full:
        state.variance_full = np.zeros((rows, cols))
    if spec.has_variance_factorized:
        state.variance_row = np.zeros(rows)
        state.variance_col = np.zeros(cols)
    if spec.kronecker_direct:
        state.factor_left = np.zeros((rows, rows))
        state.factor_right = np.zeros((cols, cols))
    elif spec.basis is BasisKind.SHAMPOO_EIGENBASIS:
        left, right = active_sides(spec, rows, cols)
        if left:
            state.factor_left = np.zeros((rows, rows))
        if right:
            state.factor_right = np.zeros((cols, cols))
    return state


def _corrected_momentum(spec: UpdateRuleSpec, state: OptimState) -> np.ndarray:
    if spec.bias_correction:
        return state.momentum / (1.0 - spec.beta1**state.step_count)
    return state.momentum


def _beta2_correction(spec: UpdateRuleSpec, state: OptimState) -> float:
    if spec.bias_correction:
        return 1.0 - spec.beta2**state.step_count
    return 1.0


def _variance_full_denominator(
    spec: UpdateRuleSpec, state: OptimState, squared: np.ndarray
) -> np.ndarray:
    state.variance_full *= spec.beta2
    state.variance_full += (1.0 - spec.beta2) * squared
    return np.sqrt(state.variance_full / _beta2_correction(spec, state)) + spec.eps


def factorized_variance_update(
    spec: UpdateRuleSpec, state: OptimState, grad_in_basis: np.ndarray
) -> np.ndarray:
    """Advance the rank-1 variance estimate and return the denominator.

    Row/column means of the squared input feed two EMAs whose scaled outer
    product estimates the full second moment; the scaling makes the
    estimate exact whenever the true second-moment matrix is rank 1.  A
    dead buffer (all zeros) yields a flat eps denominator instead of
    dividing by zero.
    """
    squared = grad_in_basis * grad_in_basis
    state.variance_row *= spec.beta2
    state.variance_row += (1.0 - spec.beta2) * squared.mean(axis=1)
    state.variance_col *= spec.beta2
    state.variance_col += (1.0 - spec.beta2) * squared.mean(axis=0)
    correction = _beta2_correction(spec, state)
    v_row = state.variance_row / correction
    v_col = state.variance_col / correction
    total = float(v_row.sum())
    scale = v_row.size / total if total > 0.0 else 0.0
    return np.sqrt(np.outer(v_row, v_col) * scale) + spec.eps


def _rotate(state: OptimState, x: np.ndarray, left: bool, right: bool) -> np.ndarray:
    out = x
    if left:
        out = state.basis_left.T @ out
    if right:
        out = out @ state.basis_right
    return out


def _unrotate(state: OptimState, x: np.ndarray, left: bool, right: bool) -> np.ndarray:
    out = x
    if left:
        out = state.basis_left @ out
    if right:
        out = out @ state.basis_right.T
    return out


def _update_factors(spec: UpdateRuleSpec, state: OptimState, grad: np.ndarray) -> None:
    if state.factor_left is not None:
        state.factor_left *= spec.beta2
        state.factor_left += (1.0 - spec.beta2) * (grad @ grad.T)
    if state.factor_right is not None:
        state.factor_right *= spec.beta2
        state.factor_right += (1.0 - spec.beta2) * (grad.T @ grad)


def _basis_age(state: OptimState) -> int:
    return state.step_count - state.last_refresh_step


def _refresh_eigenbases(spec: UpdateRuleSpec, state: OptimState) -> None:
    """Recompute cached eigenbases when due, warm-started from the old ones.

    Due means no basis exists yet or the cached one has reached
    refresh_interval steps of age.  Eigenbases are scale-free, so the
    factor EMAs feed sym_eigh without bias correction.
    """
    age = _basis_age(state)
    if age > spec.refresh_interval:
        raise RuntimeError(
            f"eigenbasis is {age} steps stale, past the refresh interval "
            f"{spec.refresh_interval}"
        )
    if not (state.last_refresh_step == 0 or age == spec.refresh_interval):
        return
    if state.factor_left is not None:
        state.basis_left = sym_eigh(
            state.factor_left, warm_start=state.basis_left
        ).eigenvectors
    if state.factor_right is not None:
        state.basis_right = sym_eigh(
            state.factor_right, warm_start=state.basis_right
        ).eigenvectors
    state.last_refresh_step = state.step_count


def _lookahead_blend(
    spec: UpdateRuleSpec, momentum: np.ndarray, grad: np.ndarray
) -> np.ndarray:
    b3 = spec.lookahead_beta3
    return (1.0 - b3) * momentum + b3 * grad


# family updates ------------------------------------------------------------


def shampoo_step(spec: UpdateRuleSpec, state: OptimState, grad: np.ndarray) -> np.ndarray:
    """Direct Kronecker rule: inverse quarter powers of both factor EMAs."""
    _update_factors(spec, state, grad)
    age = _basis_age(state)
    if age > spec.refresh_interval:
        raise RuntimeError(
            f"cached preconditioner is {age} steps stale, past the refresh "
            f"interval {spec.refresh_interval}"
        )
    if state.last_refresh_step == 0 or age == spec.refresh_interval:
        correction = _beta2_correction(spec, state)
        state.precond_left = matrix_power_sym(
            state.factor_left / correction, -0.25, eps=spec.matrix_power_eps
        )
        state.precond_right = matrix_power_sym(
            state.factor_right / correction, -0.25, eps=spec.matrix_power_eps
        )
        state.last_refresh_step = state.step_count
    return state.precond_left @ _corrected_momentum(spec, state) @ state.precond_right


def soap_step(spec: UpdateRuleSpec, state: OptimState, grad: np.ndarray) -> np.ndarray:
    """Variance adaptation inside the factor eigenbasis."""
    left, right = active_sides(spec, grad.shape[0], grad.shape[1])
    _update_factors(spec, state, grad)
    _refresh_eigenbases(spec, state)
    m_rot = _rotate(state, _corrected_momentum(spec, state), left, right)
    g_rot = _rotate(state, grad, left, right)
    if spec.normalizer is NormalizerKind.VARIANCE_FULL:
        denom = _variance_full_denominator(spec, state, g_rot * g_rot)
    else:
        denom = factorized_variance_update(spec, state, g_rot)
    return _unrotate(state, m_rot / denom, left, right)


def splus_step(spec: UpdateRuleSpec, state: OptimState, grad: np.ndarray) -> np.ndarray:
    """Signed descent inside the factor eigenbasis."""
    left, right = active_sides(spec, grad.shape[0], grad.shape[1])
    _update_factors(spec, state, grad)
    _refresh_eigenbases(spec, state)
    m_rot = _rotate(state, _corrected_momentum(spec, state), left, right)
    if spec.normalizer is NormalizerKind.SIGN_LOOKAHEAD:
        g_rot = _rotate(state, grad, left, right)
        signed = np.sign(_lookahead_blend(spec, m_rot, g_rot))
    else:
        signed = np.sign(m_rot)
    return _unrotate(state, signed, left, right)


def muon_step(spec: UpdateRuleSpec, state: OptimState, grad: np.ndarray) -> np.ndarray:
    """Spectral sign descent: orthogonalize the momentum by Newton-Schulz."""
    source = _corrected_momentum(spec, state)
    if spec.normalizer is NormalizerKind.SIGN_LOOKAHEAD:
        source = _lookahead_blend(spec, source, grad)
    return newton_schulz_orthogonalize(source, iters=spec.ns_iters)


def _post_normalize(
    spec: UpdateRuleSpec, state: OptimState, pre: np.ndarray
) -> np.ndarray:
    """Variance-adapt an already normalized update in the original basis."""
    if spec.post_normalizer is PostNormalizerKind.VARIANCE_FULL_ORIGINAL_BASIS:
        return pre / _variance_full_denominator(spec, state, pre * pre)
    return pre / factorized_variance_update(spec, state, pre)


def adamuon_step(spec: UpdateRuleSpec, state: OptimState, grad: np.ndarray) -> np.ndarray:
    """Newton-Schulz orthogonalization with elementwise variance on top."""
    return _post_normalize(spec, state, muon_step(spec, state, grad))


def spa_step(spec: UpdateRuleSpec, state: OptimState, grad: np.ndarray) -> np.ndarray:
    """Eigenbasis sign descent, then variance adaptation in the original basis."""
    return _post_normalize(spec, state, splus_step(spec, state, grad))


def lookahead_sign_step(
    spec: UpdateRuleSpec, state: OptimState, grad: np.ndarray
) -> np.ndarray:
    """Sign of the momentum/gradient blend in the elementwise basis."""
    return np.sign(_lookahead_blend(spec, _corrected_momentum(spec, state), grad))


def _elementwise_core(
    spec: UpdateRuleSpec, state: OptimState, grad: np.ndarray
) -> np.ndarray:
    if spec.normalizer is NormalizerKind.SIGN:
        return np.sign(_corrected_momentum(spec, state))
    if spec.normalizer is NormalizerKind.SIGN_LOOKAHEAD:
        return lookahead_sign_step(spec, state, grad)
    if spec.normalizer is NormalizerKind.VARIANCE_FULL:
        denom = _variance_full_denominator(spec, state, grad * grad)
        return _corrected_momentum(spec, state) / denom
    denom = factorized_variance_update(spec, state, grad)
    return _corrected_momentum(spec, state) / denom


def step(
    spec: UpdateRuleSpec,
    state: OptimState,
    grad: np.ndarray,
    param: np.ndarray,
    lr_now: float,
    name: str = "param",
) -> np.ndarray:
    """Advance one optimization step in place; returns the raw update U."""
    if grad.shape != param.shape:
        raise ValueError(
            f"{name}: gradient shape {grad.shape} does not match "
            f"parameter shape {param.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"{name}: non-finite gradient")
    state.step_count += 1
    state.momentum *= spec.beta1
    state.momentum += (1.0 - spec.beta1) * grad

    if spec.kronecker_direct:
        update = shampoo_step(spec, state, grad)
    elif spec.basis is BasisKind.NEWTON_SCHULZ:
        if spec.post_normalizer is PostNormalizerKind.NONE:
            update = muon_step(spec, state, grad)
        else:
            update = adamuon_step(spec, state, grad)
    elif spec.basis is BasisKind.SHAMPOO_EIGENBASIS:
        if spec.normalizer in SIGN_KINDS:
            if spec.post_normalizer is PostNormalizerKind.NONE:
                update = splus_step(spec, state, grad)
            else:
                update = spa_step(spec, state, grad)
        else:
            update = soap_step(spec, state, grad)
    else:
        pre = _elementwise_core(spec, state, grad)
        if spec.post_normalizer is PostNormalizerKind.NONE:
            update = pre
        else:
            update = _post_normalize(spec, state, pre)

    param -= lr_now * (update + spec.weight_decay * param)
    return update
