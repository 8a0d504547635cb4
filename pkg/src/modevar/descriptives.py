"""Interviewer-level descriptive statistics for a binary variable.

Per (interviewer, mode) cell: the proportion of ones and the population-form
within-interviewer SD.  Per mode: the respondent-level mean, the SD of
interviewer means around it (divisor = number of interviewers), and the
average of the within-interviewer SDs.  All SDs use divisor n, not n - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .data import Dataset

__all__ = ["InterviewerSummary", "ModeSummary", "interviewer_means", "mode_summary"]


@dataclass(frozen=True)
class InterviewerSummary:
    interviewer: str
    mode: int
    n: int
    mean: float
    within_sd: float


@dataclass(frozen=True)
class ModeSummary:
    mode: int
    mean: float
    between_sd: float
    avg_within_sd: float
    n_interviewers: int
    n_respondents: int


def _cells(dataset: Dataset, values):
    cells = {}
    order = []
    for r, y in zip(dataset.records, values):
        key = (r.interviewer, r.mode)
        if key not in cells:
            cells[key] = []
            order.append(key)
        cells[key].append(y)
    return order, cells


def _binary_values(dataset: Dataset):
    return [r.outcome for r in dataset.records]


def interviewer_means(dataset: Dataset, values=None):
    """One summary per (interviewer, mode) cell, first-appearance order.

    ``values`` may supply an alternative binary vector aligned with the
    records; by default the dataset's outcome column is summarized.
    Single-record cells have within_sd 0.
    """
    if values is None:
        values = _binary_values(dataset)
    for i, v in enumerate(values):
        if v not in (0, 1):
            raise ValueError(f"record {i}: value {v!r} is not binary")
    order, cells = _cells(dataset, values)
    out = []
    for key in order:
        ys = cells[key]
        n = len(ys)
        mean = sum(ys) / n
        var = sum((y - mean) ** 2 for y in ys) / n
        out.append(InterviewerSummary(key[0], key[1], n, mean, math.sqrt(var)))
    return out


def mode_summary(dataset: Dataset, values=None):
    """Per-mode mean, between-interviewer SD, and average within SD.

    The mode mean averages over respondents; the between SD centers the
    interviewer means on that respondent-level mean, unweighted across
    interviewers.  Returned FTF (mode 1) first.
    """
    if values is None:
        values = _binary_values(dataset)
    summaries = interviewer_means(dataset, values)
    out = []
    for mode in (1, 0):
        group = [s for s in summaries if s.mode == mode]
        n_resp = sum(s.n for s in group)
        mean = sum(s.n * s.mean for s in group) / n_resp
        between_var = sum((s.mean - mean) ** 2 for s in group) / len(group)
        avg_within = sum(s.within_sd for s in group) / len(group)
        out.append(ModeSummary(mode, mean, math.sqrt(between_var),
                               avg_within, len(group), n_resp))
    return out
