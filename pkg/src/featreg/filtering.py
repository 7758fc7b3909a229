"""Two-stage correspondence filtering.

Stage one keeps a pair only when the backward match returns within
``t_ic`` pixels of where it started. Stage two fits one global transform
to everything still active and cuts pairs whose residual reaches
``t_trans``. Boundary semantics are asymmetric on purpose: the
consistency check keeps on <=, the residual check rejects on >=.
Filters never move points; they only rewrite status flags.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    STATUS_ACTIVE,
    STATUS_REJECTED_IC,
    STATUS_REJECTED_RESIDUAL,
    CorrespondenceSet,
    Transform,
)
from .transforms import apply_to_array, fit_transform


@dataclass(frozen=True)
class FilterReport:
    """Counts and parameters of one filtering run, for diagnostics."""

    input_count: int
    kept_after_ic: int
    kept_after_residual: int
    ic_threshold: float
    residual_threshold: float
    fitted_global: Transform

    def __post_init__(self) -> None:
        if not (self.input_count >= self.kept_after_ic
                >= self.kept_after_residual >= 0):
            raise ValueError("filter counts must be non-increasing")

    def as_dict(self) -> dict:
        return {
            "input_count": self.input_count,
            "kept_after_ic": self.kept_after_ic,
            "kept_after_residual": self.kept_after_residual,
            "ic_threshold": self.ic_threshold,
            "residual_threshold": self.residual_threshold,
            "fitted_global_kind": self.fitted_global.kind,
        }


def inverse_consistency_filter(corrs: CorrespondenceSet,
                               t_ic: float) -> CorrespondenceSet:
    """Reject active pairs whose forward-backward loop misses by > t_ic."""
    if t_ic < 0:
        raise ValueError("t_ic must be non-negative")
    if corrs.back_xy is None:
        raise ValueError("inverse-consistency filter needs backward matches")
    if len(corrs) == 0:
        return corrs
    gap = np.linalg.norm(corrs.fixed_xy - corrs.back_xy, axis=1)
    status = np.array(corrs.status)
    reject = (status == STATUS_ACTIVE) & (gap > t_ic)
    status[reject] = STATUS_REJECTED_IC
    return corrs.with_status(status)


def transform_residual_filter(corrs: CorrespondenceSet, fit_kind: str,
                              t_trans: float, max_iterations: int = 1,
                              ) -> tuple:
    """Fit a global transform to all active pairs, cut pairs it misses.

    One fit-and-cut pass by default. With max_iterations > 1 the fit is
    repeated on the survivors until no pair is newly rejected. Returns
    (filtered set, last fitted transform).
    """
    if t_trans <= 0:
        raise ValueError("t_trans must be positive")
    if max_iterations < 1:
        raise ValueError("max_iterations must be at least 1")
    fitted = None
    for _ in range(max_iterations):
        fitted = fit_transform(fit_kind, corrs)
        active = corrs.active_mask
        predicted = apply_to_array(fitted, corrs.fixed_xy[active])
        residual = np.linalg.norm(predicted - corrs.moving_xy[active], axis=1)
        reject = residual >= t_trans
        if not np.any(reject):
            break
        status = np.array(corrs.status)
        idx = np.flatnonzero(active)
        status[idx[reject]] = STATUS_REJECTED_RESIDUAL
        corrs = corrs.with_status(status)
    return corrs, fitted


def run_filters(corrs: CorrespondenceSet, t_ic: float, t_trans: float,
                fit_kind: str = "affine", max_iterations: int = 1) -> tuple:
    """Consistency filter, then residual filter; returns (set, report)."""
    n = len(corrs)
    after_ic = inverse_consistency_filter(corrs, t_ic)
    kept_ic = after_ic.active_count
    filtered, fitted = transform_residual_filter(
        after_ic, fit_kind, t_trans, max_iterations)
    report = FilterReport(
        input_count=n,
        kept_after_ic=kept_ic,
        kept_after_residual=filtered.active_count,
        ic_threshold=float(t_ic),
        residual_threshold=float(t_trans),
        fitted_global=fitted,
    )
    return filtered, report
