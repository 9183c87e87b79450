"""Escalation decisions from posterior draws.

Every retained draw is pushed through the dose-DLT curve, classified into
the underdose / target-toxicity / overdose bands, and the per-dose band
probabilities drive the EWOC feasibility rule, the next-dose choice, the
MTD recommendation, and the stopping decision.

Band convention: UD is pi < ud_upper, TT is ud_upper <= pi < tt_upper,
OD is pi >= tt_upper, so the three probabilities partition every draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .model import DoseGrid, ModelKind, RateMethod, dlt_rate_matrix
from .sampler import PosteriorDraws


@dataclass(frozen=True)
class IntervalSpec:
    """Band edges for underdose / target toxicity / overdose."""

    ud_upper: float = 0.16
    tt_upper: float = 0.33

    def __post_init__(self) -> None:
        if not 0.0 < self.ud_upper < self.tt_upper < 1.0:
            raise ValueError("need 0 < ud_upper < tt_upper < 1")


@dataclass(frozen=True)
class EwocConfig:
    """Overdose-control rule for admissible doses and escalation steps.

    A dose is feasible when its posterior overdose probability is below
    ``feasibility_bound``. Escalation may skip levels only up to
    ``max_increment_ratio`` times the current dose; the immediately next
    grid level is always reachable when ``allow_next_level`` is set (the
    planned grids step by up to 3.33x, slightly beyond the nominal 200%
    increment, and escalation would otherwise stall between levels).
    De-escalation is never capped.
    """

    feasibility_bound: float = 0.25
    max_increment_ratio: float = 3.0
    allow_next_level: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.feasibility_bound < 1.0:
            raise ValueError("feasibility_bound must be in (0, 1)")
        if self.max_increment_ratio < 1.0:
            raise ValueError("max_increment_ratio must be >= 1")


@dataclass(frozen=True)
class StoppingConfig:
    """Trial stopping rules.

    By default a trial declares its MTD once enough patients sit at the
    recommended dose AND either the target-toxicity probability there is
    confident or the overall enrollment floor is reached. Setting
    ``require_all`` False makes the three conditions stop the trial
    independently instead.
    """

    min_at_mtd: int = 6
    tt_prob_threshold: float = 0.5
    min_total_for_alt_stop: int = 15
    max_total: int = 50
    cohort_size: int = 3
    require_all: bool = True

    def __post_init__(self) -> None:
        for name in ("min_at_mtd", "min_total_for_alt_stop", "max_total", "cohort_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.tt_prob_threshold <= 1.0:
            raise ValueError("tt_prob_threshold must be in (0, 1]")


@dataclass(frozen=True)
class DosePosteriorSummary:
    """Posterior band probabilities and DLT-rate summaries for one dose."""

    dose: float
    p_ud: float
    p_tt: float
    p_od: float
    mean_dlt_rate: float
    median_dlt_rate: float


class Action(Enum):
    ESCALATE_TO = "escalate"
    STAY = "stay"
    DEESCALATE_TO = "deescalate"
    STOP_DECLARE_MTD = "declare-mtd"
    STOP_NO_MTD = "no-mtd"


@dataclass(frozen=True)
class Recommendation:
    decision: Action
    dose: float | None
    feasible_doses: tuple[float, ...]
    rationale: dict


class StopStatus(Enum):
    CONTINUE = "continue"
    STOP_DECLARE_MTD = "declare-mtd"
    STOP_NO_MTD = "no-mtd"
    STOP_MAX_N = "max-n"


@dataclass(frozen=True)
class StopOutcome:
    status: StopStatus
    mtd: float | None = None
    reason: str = ""


def interval_probabilities(draws: PosteriorDraws, grid: DoseGrid, kind: ModelKind,
                           intervals: IntervalSpec = IntervalSpec(),
                           method: RateMethod = RateMethod.MARGINAL_QUADRATURE,
                           ) -> list[DosePosteriorSummary]:
    """Classify every draw's DLT rate at every grid dose into UD/TT/OD.

    The UD probability is computed as the complement of the other two so
    the partition sums to 1 exactly in floating point.
    """
    if draws.draws.shape[0] == 0:
        raise ValueError("no posterior draws")
    rates = dlt_rate_matrix(draws.draws, grid.doses, grid, kind, method)
    m = rates.shape[0]
    out = []
    for j, dose in enumerate(grid.doses):
        r = rates[:, j]
        p_tt = float(((r >= intervals.ud_upper) & (r < intervals.tt_upper)).sum() / m)
        p_od = float((r >= intervals.tt_upper).sum() / m)
        out.append(DosePosteriorSummary(
            dose=dose,
            p_ud=1.0 - p_tt - p_od,
            p_tt=p_tt,
            p_od=p_od,
            mean_dlt_rate=float(r.mean()),
            median_dlt_rate=float(np.median(r)),
        ))
    return out


def feasible_doses(summaries: Sequence[DosePosteriorSummary],
                   ewoc: EwocConfig) -> tuple[float, ...]:
    """Doses whose posterior overdose probability is under the EWOC bound."""
    return tuple(s.dose for s in summaries if s.p_od < ewoc.feasibility_bound)


def _dose_index(doses: Sequence[float], dose: float) -> int:
    for i, d in enumerate(doses):
        if math.isclose(d, dose, rel_tol=1e-9, abs_tol=0.0):
            return i
    raise ValueError(f"dose {dose} is not one of the summarized doses")


def next_dose(current: float, summaries: Sequence[DosePosteriorSummary],
              ewoc: EwocConfig) -> Recommendation:
    """EWOC next-dose rule: highest feasible dose within the increment cap."""
    doses = [s.dose for s in summaries]
    cur_idx = _dose_index(doses, current)
    feasible = feasible_doses(summaries, ewoc)
    if not feasible:
        return Recommendation(Action.STOP_NO_MTD, None, feasible,
                              {"rule": "no-feasible-dose"})
    cap = current * ewoc.max_increment_ratio * (1.0 + 1e-12)
    allowed = [d for d in feasible if d <= cap]
    if ewoc.allow_next_level and cur_idx + 1 < len(doses) and doses[cur_idx + 1] in feasible:
        step_up = doses[cur_idx + 1]
        if step_up not in allowed:
            allowed.append(step_up)
    candidate = max(allowed)
    cand_idx = _dose_index(doses, candidate)
    rationale = {"rule": "ewoc-max-feasible", "increment_cap": cap,
                 "overdose_bound": ewoc.feasibility_bound}
    if cand_idx > cur_idx:
        return Recommendation(Action.ESCALATE_TO, candidate, feasible, rationale)
    if cand_idx == cur_idx:
        return Recommendation(Action.STAY, candidate, feasible, rationale)
    rationale["rule"] = "deescalate-to-max-feasible"
    return Recommendation(Action.DEESCALATE_TO, candidate, feasible, rationale)


def recommended_mtd(summaries: Sequence[DosePosteriorSummary],
                    ewoc: EwocConfig) -> float | None:
    """Feasible dose with the highest target-toxicity probability.

    Ties go to the lower dose; None when nothing is feasible.
    """
    best: DosePosteriorSummary | None = None
    bound = ewoc.feasibility_bound
    for s in summaries:
        if s.p_od < bound and (best is None or s.p_tt > best.p_tt):
            best = s
    return None if best is None else best.dose


def check_stopping(counts: Sequence[int], summaries: Sequence[DosePosteriorSummary],
                   stopping: StoppingConfig, ewoc: EwocConfig) -> StopOutcome:
    """Evaluate the trial stopping rules after a refit.

    ``counts`` holds the number of subjects treated at each summarized dose,
    in the same order as ``summaries``.
    """
    if len(counts) != len(summaries):
        raise ValueError("counts must align with summaries")
    total = int(sum(counts))
    mtd = recommended_mtd(summaries, ewoc)
    if mtd is None:
        return StopOutcome(StopStatus.STOP_NO_MTD, None, "no dose satisfies EWOC")
    idx = _dose_index([s.dose for s in summaries], mtd)
    p_tt = summaries[idx].p_tt
    if stopping.require_all:
        if counts[idx] >= stopping.min_at_mtd:
            if p_tt >= stopping.tt_prob_threshold:
                return StopOutcome(StopStatus.STOP_DECLARE_MTD, mtd,
                                   f"{counts[idx]} treated at MTD and p_tt={p_tt:.3f}")
            if total >= stopping.min_total_for_alt_stop:
                return StopOutcome(StopStatus.STOP_DECLARE_MTD, mtd,
                                   f"{counts[idx]} treated at MTD and {total} total")
    else:
        if counts[idx] >= stopping.min_at_mtd:
            return StopOutcome(StopStatus.STOP_DECLARE_MTD, mtd,
                               f"{counts[idx]} treated at MTD")
        if p_tt >= stopping.tt_prob_threshold:
            return StopOutcome(StopStatus.STOP_DECLARE_MTD, mtd,
                               f"p_tt at MTD = {p_tt:.3f}")
        if total >= stopping.min_total_for_alt_stop:
            return StopOutcome(StopStatus.STOP_DECLARE_MTD, mtd,
                               f"{total} patients treated")
    if total >= stopping.max_total:
        return StopOutcome(StopStatus.STOP_MAX_N, mtd, "maximum sample size reached")
    return StopOutcome(StopStatus.CONTINUE, mtd, "")
