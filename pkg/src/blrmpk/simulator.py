"""Virtual dose-escalation trials and their operating characteristics.

A scenario fixes the true per-dose log-exposure means and DLT probabilities.
Each simulated trial starts at the lowest dose, enrolls cohorts, refits the
chosen model after every cohort, and follows the EWOC next-dose and stopping
rules until it ends. Studies aggregate many trials into the standard
operating characteristics (participant allocation by true toxicity band,
MTD classification, average sample size) plus a coherence monitor counting
escalations that immediately follow a cohort with a DLT.

Per-trial and per-cohort RNG substreams are derived from the master seed,
so results are reproducible bit-for-bit and independent of scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .decision import (Action, DosePosteriorSummary, EwocConfig, IntervalSpec,
                       Recommendation, StoppingConfig, StopOutcome, StopStatus,
                       check_stopping, interval_probabilities, next_dose)
from .fitting import fit_posterior
from .model import (DoseGrid, ModelKind, PriorSpec, RateMethod, SubjectRecord,
                    TrialDataset)
from .sampler import McmcConfig, SamplerInitError, derive_substream_seed


@dataclass(frozen=True)
class Scenario:
    """Data-generating truth: per-dose log-exposure mean and DLT probability."""

    name: str
    grid: DoseGrid
    true_log_exposure_mean: tuple[float, ...]
    true_dlt_prob: tuple[float, ...]
    pk_log_sd: float = 0.5

    def __post_init__(self) -> None:
        n = len(self.grid.doses)
        if len(self.true_log_exposure_mean) != n or len(self.true_dlt_prob) != n:
            raise ValueError("per-dose vectors must match the grid length")
        if any(not 0.0 < p < 1.0 for p in self.true_dlt_prob):
            raise ValueError("true_dlt_prob values must be in (0, 1)")
        if any(b < a for a, b in zip(self.true_dlt_prob, self.true_dlt_prob[1:])):
            raise ValueError("true_dlt_prob must be non-decreasing in dose")
        if self.pk_log_sd <= 0:
            raise ValueError("pk_log_sd must be positive")

    def dlt_prob(self, dose: float) -> float:
        return self.true_dlt_prob[self.grid.index_of(dose)]

    def log_exposure_mean(self, dose: float) -> float:
        return self.true_log_exposure_mean[self.grid.index_of(dose)]


def builtin_scenarios() -> dict[str, Scenario]:
    """The two bundled simulation scenarios (7-dose and 9-dose grids)."""
    one = Scenario(
        name="table3-1",
        grid=DoseGrid((0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 50.0), 50.0),
        true_log_exposure_mean=(0.40, 0.47, 0.53, 0.60, 0.67, 0.73, 0.80),
        true_dlt_prob=(0.15, 0.17, 0.19, 0.21, 0.24, 0.26, 0.29),
    )
    two = Scenario(
        name="table3-2",
        grid=DoseGrid((0.13, 0.33, 0.83, 1.40, 1.87, 2.10, 2.47, 2.80, 3.2), 3.2),
        true_log_exposure_mean=(0.05, 0.13, 0.28, 0.67, 0.75, 1.10, 1.15, 1.15, 1.16),
        true_dlt_prob=(0.125, 0.133, 0.151, 0.210, 0.223, 0.289, 0.299, 0.300, 0.302),
    )
    return {one.name: one, two.name: two}


class Band(Enum):
    UD = "UD"
    TT = "TT"
    OD = "OD"


def classify_dose(true_prob: float, intervals: IntervalSpec = IntervalSpec()) -> Band:
    """Band of a true DLT probability: UD below, TT inside, OD at/above."""
    if true_prob < intervals.ud_upper:
        return Band.UD
    if true_prob < intervals.tt_upper:
        return Band.TT
    return Band.OD


@dataclass(frozen=True)
class CohortOutcome:
    dose: float
    dlt: tuple[int, ...]
    pk: tuple[float, ...]


def generate_cohort(scenario: Scenario, dose: float, size: int,
                    rng: np.random.Generator) -> CohortOutcome:
    """Simulate one cohort: Bernoulli DLTs, then log-normal PK summaries.

    DLTs are drawn before PK values so dose-only results do not depend on
    the PK noise level.
    """
    p = scenario.dlt_prob(dose)
    mu = scenario.log_exposure_mean(dose)
    dlt = tuple(int(u < p) for u in rng.random(size))
    pk = tuple(float(x) for x in np.exp(rng.normal(mu, scenario.pk_log_sd, size)))
    return CohortOutcome(dose=dose, dlt=dlt, pk=pk)


@dataclass(frozen=True)
class TrialDesign:
    """Everything a simulated trial needs besides the scenario and seed.

    ``min_levels_for_pk`` holds the joint model back until that many dose
    levels carry data: with a single tested level the dose-exposure slope
    is unidentifiable and the exposure channel only adds noise, so earlier
    cohorts are driven by the dose-only fit. ``enforce_coherence`` blocks
    escalation immediately after a cohort that saw a DLT, which the
    escalation-with-overdose-control scheme is meant to satisfy anyway.
    """

    prior: PriorSpec = PriorSpec()
    intervals: IntervalSpec = IntervalSpec()
    ewoc: EwocConfig = EwocConfig()
    stopping: StoppingConfig = StoppingConfig()
    mcmc: McmcConfig = McmcConfig()
    rate_method: RateMethod = RateMethod.MARGINAL_QUADRATURE
    min_levels_for_pk: int = 2
    enforce_coherence: bool = True


@dataclass(frozen=True)
class CohortStep:
    """One loop pass: the cohort, the refit summaries, and what was decided."""

    outcome: CohortOutcome
    summaries: tuple[DosePosteriorSummary, ...]
    stop: StopOutcome
    recommendation: Recommendation


@dataclass(frozen=True)
class TrialTrace:
    cohorts: tuple[CohortStep, ...]
    final: Recommendation
    stop_status: StopStatus
    mtd: float | None
    total_n: int
    aborted: bool = False


def run_trial(scenario: Scenario, kind: ModelKind, design: TrialDesign,
              seed: int) -> TrialTrace:
    """Run one adaptive trial to completion; deterministic given ``seed``."""
    grid = scenario.grid
    records: list[SubjectRecord] = []
    dose = grid.doses[0]
    steps: list[CohortStep] = []
    cohort_index = 0
    while True:
        rng = np.random.Generator(np.random.PCG64(
            derive_substream_seed(seed, 2 * cohort_index)))
        outcome = generate_cohort(scenario, dose, design.stopping.cohort_size, rng)
        records.extend(SubjectRecord(dose=dose, dlt=d, pk=x)
                       for d, x in zip(outcome.dlt, outcome.pk))
        data = TrialDataset(tuple(records), grid)
        fit_kind = kind
        if kind is ModelKind.JOINT_PK:
            levels = len({grid.index_of(r.dose) for r in records})
            if levels < design.min_levels_for_pk:
                fit_kind = ModelKind.DOSE_ONLY
        mcmc = replace(design.mcmc, seed=derive_substream_seed(seed, 2 * cohort_index + 1))
        try:
            draws = fit_posterior(data, design.prior, fit_kind, mcmc)
        except SamplerInitError:
            return TrialTrace(cohorts=tuple(steps),
                              final=Recommendation(Action.STOP_NO_MTD, None, (),
                                                   {"rule": "sampler-failure"}),
                              stop_status=StopStatus.STOP_NO_MTD, mtd=None,
                              total_n=len(records), aborted=True)
        summaries = tuple(interval_probabilities(
            draws, grid, fit_kind, design.intervals, design.rate_method))
        counts = [data.count_at(d) for d in grid.doses]
        stop = check_stopping(counts, summaries, design.stopping, design.ewoc)
        total = len(records)
        if stop.status is StopStatus.CONTINUE and \
                total + design.stopping.cohort_size > design.stopping.max_total:
            # a further cohort would exceed the enrollment cap
            stop = StopOutcome(StopStatus.STOP_MAX_N, stop.mtd,
                               "next cohort would exceed max_total")
        if stop.status is not StopStatus.CONTINUE:
            final = _final_recommendation(stop, summaries, design.ewoc)
            steps.append(CohortStep(outcome, summaries, stop, final))
            return TrialTrace(cohorts=tuple(steps), final=final,
                              stop_status=stop.status, mtd=stop.mtd,
                              total_n=total)
        rec = next_dose(dose, summaries, design.ewoc)
        if design.enforce_coherence and rec.decision is Action.ESCALATE_TO \
                and any(outcome.dlt):
            rec = Recommendation(Action.STAY, dose, rec.feasible_doses,
                                 {"rule": "coherence-hold",
                                  "detail": "DLT in the last cohort blocks escalation"})
        steps.append(CohortStep(outcome, summaries, stop, rec))
        dose = rec.dose
        cohort_index += 1


def _final_recommendation(stop: StopOutcome, summaries, ewoc) -> Recommendation:
    from .decision import feasible_doses
    feas = feasible_doses(summaries, ewoc)
    if stop.status is StopStatus.STOP_NO_MTD:
        return Recommendation(Action.STOP_NO_MTD, None, feas, {"rule": stop.reason})
    return Recommendation(Action.STOP_DECLARE_MTD, stop.mtd, feas,
                          {"rule": stop.status.value, "detail": stop.reason})


@dataclass(frozen=True)
class TrialSummary:
    """What a study keeps from each trial."""

    index: int
    seed: int
    total_n: int
    stop_status: StopStatus
    mtd: float | None
    mtd_band: Band | None        # None when no MTD was declared
    participants_by_band: dict
    n_transitions: int
    n_incoherent_escalations: int
    aborted: bool


def summarize_trial(trace: TrialTrace, scenario: Scenario,
                    intervals: IntervalSpec, index: int, seed: int) -> TrialSummary:
    counts = {Band.UD: 0, Band.TT: 0, Band.OD: 0}
    for step in trace.cohorts:
        band = classify_dose(scenario.dlt_prob(step.outcome.dose), intervals)
        counts[band] += len(step.outcome.dlt)
    transitions = 0
    incoherent = 0
    for prev, cur in zip(trace.cohorts, trace.cohorts[1:]):
        transitions += 1
        if cur.outcome.dose > prev.outcome.dose and any(prev.outcome.dlt):
            incoherent += 1
    mtd_band = None
    if trace.mtd is not None and trace.stop_status is not StopStatus.STOP_NO_MTD:
        mtd_band = classify_dose(scenario.dlt_prob(trace.mtd), intervals)
    return TrialSummary(index=index, seed=seed, total_n=trace.total_n,
                        stop_status=trace.stop_status, mtd=trace.mtd,
                        mtd_band=mtd_band, participants_by_band=counts,
                        n_transitions=transitions,
                        n_incoherent_escalations=incoherent,
                        aborted=trace.aborted)


@dataclass(frozen=True)
class OperatingCharacteristics:
    """Study-level metrics over non-aborted trials.

    The participant percentages and the MTD-classification probabilities are
    computed so each partition sums exactly to 100 and 1.
    """

    pct_participants_tt: float
    pct_participants_od: float
    pct_participants_ud: float
    pr_mtd_tt: float
    pr_mtd_od: float
    pr_mtd_ud: float
    pr_mtd_below_sd: float
    avg_sample_size: float
    n_trials: int
    n_aborted: int
    incoherent_escalation_rate: float


def aggregate_study(summaries: Sequence[TrialSummary]) -> OperatingCharacteristics:
    kept = [s for s in summaries if not s.aborted]
    if not kept:
        raise ValueError("no completed trials to aggregate")
    n = len(kept)
    part = {Band.UD: 0, Band.TT: 0, Band.OD: 0}
    for s in kept:
        for band, c in s.participants_by_band.items():
            part[band] += c
    total_part = sum(part.values())
    pct_tt = 100.0 * part[Band.TT] / total_part
    pct_od = 100.0 * part[Band.OD] / total_part
    n_tt = sum(1 for s in kept if s.mtd_band is Band.TT)
    n_od = sum(1 for s in kept if s.mtd_band is Band.OD)
    n_ud = sum(1 for s in kept if s.mtd_band is Band.UD)
    pr_tt = n_tt / n
    pr_od = n_od / n
    pr_ud = n_ud / n
    transitions = sum(s.n_transitions for s in kept)
    incoherent = sum(s.n_incoherent_escalations for s in kept)
    return OperatingCharacteristics(
        pct_participants_tt=pct_tt,
        pct_participants_od=pct_od,
        pct_participants_ud=100.0 - pct_tt - pct_od,
        pr_mtd_tt=pr_tt,
        pr_mtd_od=pr_od,
        pr_mtd_ud=pr_ud,
        pr_mtd_below_sd=1.0 - pr_tt - pr_od - pr_ud,
        avg_sample_size=sum(s.total_n for s in kept) / n,
        n_trials=n,
        n_aborted=len(summaries) - n,
        incoherent_escalation_rate=(incoherent / transitions) if transitions else 0.0,
    )


def _study_worker(args) -> TrialSummary:
    scenario, kind, design, index, seed = args
    trace = run_trial(scenario, kind, design, seed)
    return summarize_trial(trace, scenario, design.intervals, index, seed)


def run_trial_summaries(scenario: Scenario, kind: ModelKind, design: TrialDesign,
                        n_trials: int, master_seed: int,
                        n_jobs: int = 1) -> list[TrialSummary]:
    """Per-trial summaries with one RNG substream per trial.

    Output is identical for any ``n_jobs``; workers only differ in where
    the trials execute.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    jobs = [(scenario, kind, design, i, derive_substream_seed(master_seed, i))
            for i in range(n_trials)]
    if n_jobs <= 1:
        return [_study_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_study_worker, jobs, chunksize=max(1, n_trials // (4 * n_jobs))))


def run_study(scenario: Scenario, kind: ModelKind, design: TrialDesign,
              n_trials: int, master_seed: int,
              n_jobs: int = 1) -> OperatingCharacteristics:
    """Aggregate operating characteristics over seeded replicate trials."""
    return aggregate_study(run_trial_summaries(
        scenario, kind, design, n_trials, master_seed, n_jobs))
