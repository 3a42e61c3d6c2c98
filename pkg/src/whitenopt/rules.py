"""Declarative optimizer descriptions.

An update rule is a pipeline: momentum, then an optional basis transform,
then an elementwise normalizer inside that basis, then an optional second
normalizer applied back in the original basis, then decoupled weight decay.
Every named optimizer here is one configuration of that pipeline; the only
exception is Shampoo, which applies inverse Kronecker factor powers directly
and is selected by its own flag.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum


class BasisKind(str, Enum):
    IDENTITY = "identity"
    SHAMPOO_EIGENBASIS = "shampoo_eigenbasis"
    NEWTON_SCHULZ = "newton_schulz"


class NormalizerKind(str, Enum):
    SIGN = "sign"
    VARIANCE_FULL = "variance_full"
    VARIANCE_FACTORIZED = "variance_factorized"
    SIGN_LOOKAHEAD = "sign_lookahead"


class PostNormalizerKind(str, Enum):
    NONE = "none"
    VARIANCE_FULL_ORIGINAL_BASIS = "variance_full_original_basis"
    VARIANCE_FACTORIZED_ORIGINAL_BASIS = "variance_factorized_original_basis"


class PreconditionSides(str, Enum):
    BOTH = "both"
    INPUT_ONLY = "input_only"
    OUTPUT_ONLY = "output_only"
    SMALLER_DIM = "smaller_dim"
    LARGER_DIM = "larger_dim"


SIGN_KINDS = (NormalizerKind.SIGN, NormalizerKind.SIGN_LOOKAHEAD)
VARIANCE_KINDS = (NormalizerKind.VARIANCE_FULL, NormalizerKind.VARIANCE_FACTORIZED)


@dataclass(frozen=True)
class UpdateRuleSpec:
    """One optimizer as basis x normalizer x post-normalizer plus scalars.

    beta2 drives every second-moment EMA the rule owns: the elementwise
    variance, the factorized row/column variances, and the Kronecker factor
    EMAs.  It is meaningless for rules with none of those.  eps is the
    elementwise denominator damping; matrix_power_eps damps eigenvalues
    inside fractional matrix powers and is deliberately separate.
    """

    basis: BasisKind = BasisKind.IDENTITY
    normalizer: NormalizerKind = NormalizerKind.SIGN
    post_normalizer: PostNormalizerKind = PostNormalizerKind.NONE
    kronecker_direct: bool = False
    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    matrix_power_eps: float = 1e-12
    refresh_interval: int = 10
    ns_iters: int = 5
    lookahead_beta3: float = 0.1
    precondition_sides: PreconditionSides = PreconditionSides.BOTH
    bias_correction: bool = True

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        for nm in ("beta1", "beta2"):
            b = getattr(self, nm)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{nm} must lie in [0, 1), got {b}")
        if self.eps < 0.0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.matrix_power_eps < 0.0:
            raise ValueError(
                f"matrix_power_eps must be >= 0, got {self.matrix_power_eps}"
            )
        if self.refresh_interval < 1:
            raise ValueError(
                f"refresh_interval must be >= 1, got {self.refresh_interval}"
            )
        if self.ns_iters < 1:
            raise ValueError(f"ns_iters must be >= 1, got {self.ns_iters}")
        if not 0.0 <= self.lookahead_beta3 <= 1.0:
            raise ValueError(
                f"lookahead_beta3 must lie in [0, 1], got {self.lookahead_beta3}"
            )
        if self.kronecker_direct:
            # the direct rule bypasses the pipeline; forbid stray settings
            # that would otherwise silently do nothing
            if self.basis is not BasisKind.IDENTITY:
                raise ValueError("kronecker_direct rules must keep basis=identity")
            if self.normalizer is not NormalizerKind.SIGN:
                raise ValueError(
                    "kronecker_direct rules ignore the normalizer slot; "
                    "leave it at sign"
                )
            if self.post_normalizer is not PostNormalizerKind.NONE:
                raise ValueError("kronecker_direct rules take no post-normalizer")
        if self.basis is BasisKind.NEWTON_SCHULZ:
            if self.normalizer not in SIGN_KINDS:
                raise ValueError(
                    "the Newton-Schulz basis is implicitly signed; variance "
                    "adaptation goes in the post_normalizer slot"
                )
        if self.post_normalizer is not PostNormalizerKind.NONE:
            if self.normalizer in VARIANCE_KINDS:
                raise ValueError(
                    "a rule cannot hold variance buffers in both the "
                    "normalizer and post_normalizer slots"
                )

    def replace(self, **changes) -> "UpdateRuleSpec":
        return dataclasses.replace(self, **changes)

    @property
    def has_variance_full(self) -> bool:
        return (
            self.normalizer is NormalizerKind.VARIANCE_FULL
            or self.post_normalizer is PostNormalizerKind.VARIANCE_FULL_ORIGINAL_BASIS
        )

    @property
    def has_variance_factorized(self) -> bool:
        return (
            self.normalizer is NormalizerKind.VARIANCE_FACTORIZED
            or self.post_normalizer
            is PostNormalizerKind.VARIANCE_FACTORIZED_ORIGINAL_BASIS
        )

    @property
    def has_any_variance(self) -> bool:
        return self.has_variance_full or self.has_variance_factorized

    @property
    def uses_beta2(self) -> bool:
        """Whether any buffer in the rule is driven by beta2."""
        return (
            self.has_any_variance
            or self.kronecker_direct
            or self.basis is BasisKind.SHAMPOO_EIGENBASIS
        )


def active_sides(spec: UpdateRuleSpec, rows: int, cols: int) -> tuple[bool, bool]:
    """Which of the (left/input-axis, right/output-axis) rotations apply.

    Parameters are laid out d_in x d_out, so the left factor preconditions
    the input axis.  Dimension ties resolve to the input side.
    """
    sides = spec.precondition_sides
    if sides is PreconditionSides.BOTH:
        return True, True
    if sides is PreconditionSides.INPUT_ONLY:
        return True, False
    if sides is PreconditionSides.OUTPUT_ONLY:
        return False, True
    if sides is PreconditionSides.SMALLER_DIM:
        if cols < rows:
            return False, True
        return True, False
    if rows < cols:
        return False, True
    return True, False


def memory_footprint_reals(spec: UpdateRuleSpec, rows: int, cols: int) -> int:
    """Accounted optimizer memory for one rows x cols parameter, in reals.

    Counts the parameter plus every persistent EMA buffer.  Derived caches
    that are recomputable from those buffers (eigenbases, cached inverse
    factor powers) are excluded.  Factorized variance counts rows+cols,
    except inside the eigenbasis family where the accounting convention
    charges the factored pair twice, 2*(rows+cols).
    """
    n = rows * cols
    total = 2 * n  # parameter + momentum
    if spec.kronecker_direct:
        return total + rows * rows + cols * cols
    if spec.basis is BasisKind.SHAMPOO_EIGENBASIS:
        left, right = active_sides(spec, rows, cols)
        if left:
            total += rows * rows
        if right:
            total += cols * cols
    if spec.has_variance_full:
        total += n
    if spec.has_variance_factorized:
        total += rows + cols
        if spec.basis is BasisKind.SHAMPOO_EIGENBASIS:
            total += rows + cols
    return total


# named optimizers ----------------------------------------------------------


def adam(**hp) -> UpdateRuleSpec:
    return UpdateRuleSpec(normalizer=NormalizerKind.VARIANCE_FULL, **hp)


def signum(**hp) -> UpdateRuleSpec:
    return UpdateRuleSpec(normalizer=NormalizerKind.SIGN, **hp)


def adafactor_style(**hp) -> UpdateRuleSpec:
    return UpdateRuleSpec(normalizer=NormalizerKind.VARIANCE_FACTORIZED, **hp)


def lion_style(beta3: float = 0.1, **hp) -> UpdateRuleSpec:
    return UpdateRuleSpec(
        normalizer=NormalizerKind.SIGN_LOOKAHEAD, lookahead_beta3=beta3, **hp
    )


def shampoo(refresh_interval: int = 10, **hp) -> UpdateRuleSpec:
    return UpdateRuleSpec(
        kronecker_direct=True, refresh_interval=refresh_interval, **hp
    )


def soap(refresh_interval: int = 10, **hp) -> UpdateRuleSpec:
    return UpdateRuleSpec(
        basis=BasisKind.SHAMPOO_EIGENBASIS,
        normalizer=NormalizerKind.VARIANCE_FULL,
        refresh_interval=refresh_interval,
        **hp,
    )


def splus(refresh_interval: int = 10, **hp) -> UpdateRuleSpec:
    return UpdateRuleSpec(
        basis=BasisKind.SHAMPOO_EIGENBASIS,
        normalizer=NormalizerKind.SIGN,
        refresh_interval=refresh_interval,
        **hp,
    )


def muon(ns_iters: int = 5, **hp) -> UpdateRuleSpec:
    return UpdateRuleSpec(
        basis=BasisKind.NEWTON_SCHULZ, normalizer=NormalizerKind.SIGN,
        ns_iters=ns_iters, **hp,
    )


def adamuon(ns_iters: int = 5, **hp) -> UpdateRuleSpec:
    return UpdateRuleSpec(
        basis=BasisKind.NEWTON_SCHULZ,
        normalizer=NormalizerKind.SIGN,
        post_normalizer=PostNormalizerKind.VARIANCE_FULL_ORIGINAL_BASIS,
        ns_iters=ns_iters,
        **hp,
    )


def spa(refresh_interval: int = 10, **hp) -> UpdateRuleSpec:
    return UpdateRuleSpec(
        basis=BasisKind.SHAMPOO_EIGENBASIS,
        normalizer=NormalizerKind.SIGN,
        post_normalizer=PostNormalizerKind.VARIANCE_FULL_ORIGINAL_BASIS,
        refresh_interval=refresh_interval,
        **hp,
    )
