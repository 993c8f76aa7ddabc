"""Group fairness as linear functions of group error rates.

Every supported notion writes the fairness level of group ``k`` as

    F_k = sum_j C[k, j] * P(error | group j)

with ``F_k > 0`` when group ``k`` is advantaged. ``C`` depends only on the
group proportions of the data, so it is built once and frozen.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import DataError, Dataset


class Notion(str, enum.Enum):
    ACCURACY_PARITY = "ap"
    EQUALIZED_ODDS = "eodds"
    EQUALITY_OF_OPPORTUNITY = "eopp"


@dataclass(frozen=True)
class FairnessNotion:
    kind: Notion
    desirable_labels: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "kind", Notion(self.kind))
        object.__setattr__(self, "desirable_labels", frozenset(int(l) for l in self.desirable_labels))
        if self.kind is not Notion.EQUALITY_OF_OPPORTUNITY and self.desirable_labels:
            raise ValueError("desirable labels only apply to equality of opportunity")
        if any(l < 0 for l in self.desirable_labels):
            raise ValueError("desirable labels must be non-negative label codes")

    @property
    def per_label(self) -> bool:
        return self.kind is not Notion.ACCURACY_PARITY

    def group_count(self, label_count: int, sensitive_count: int) -> int:
        return label_count * sensitive_count if self.per_label else sensitive_count

    def check(self, label_count: int) -> None:
        bad = [l for l in self.desirable_labels if l >= label_count]
        if bad:
            raise ValueError(f"desirable labels {sorted(bad)} outside [0, {label_count})")


AP = FairnessNotion(Notion.ACCURACY_PARITY)
EODDS = FairnessNotion(Notion.EQUALIZED_ODDS)


def eopp(*desirable) -> FairnessNotion:
    return FairnessNotion(Notion.EQUALITY_OF_OPPORTUNITY, frozenset(desirable))


def group_index(labels, sensitive, notion: FairnessNotion, sensitive_count: int) -> np.ndarray:
    """Canonical group of each example: ``l * |S| + r`` per label, else ``r``."""
    sensitive = np.asarray(sensitive, dtype=np.int64)
    if notion.per_label:
        return np.asarray(labels, dtype=np.int64) * sensitive_count + sensitive
    return sensitive.copy()


@dataclass(frozen=True, eq=False)
class GroupPartition:
    group_of: np.ndarray
    K: int
    group_key: tuple
    priors: np.ndarray


def _cell_counts(ds: Dataset) -> np.ndarray:
    counts = np.zeros((ds.label_count, ds.sensitive_count), dtype=np.int64)
    np.add.at(counts, (ds.labels, ds.sensitive), 1)
    return counts


def partition(ds: Dataset, notion: FairnessNotion) -> GroupPartition:
    notion.check(ds.label_count)
    L, S = ds.label_count, ds.sensitive_count
    if notion.per_label:
        cells = _cell_counts(ds)
        missing = [(l, r) for l in range(L) for r in range(S) if cells[l, r] == 0]
        if missing:
            raise DataError(f"empty (label, sensitive) cells: {missing}")
        keys = tuple((l, r) for l in range(L) for r in range(S))
    else:
        present = np.bincount(ds.sensitive, minlength=S)
        missing = [r for r in range(S) if present[r] == 0]
        if missing:
            raise DataError(f"empty sensitive groups: {missing}")
        keys = tuple((r,) for r in range(S))
    K = len(keys)
    group_of = group_index(ds.labels, ds.sensitive, notion, S)
    priors = np.bincount(group_of, minlength=K) / ds.n
    return GroupPartition(group_of, K, keys, priors)


def build_constants(p: GroupPartition, notion: FairnessNotion, ds: Dataset) -> np.ndarray:
    """K x K matrix with ``C[k, j]`` the weight of group j's error rate in F_k."""
    L, S = ds.label_count, ds.sensitive_count
    C = np.zeros((p.K, p.K))
    if not notion.per_label:
        ps = np.bincount(ds.sensitive, minlength=S) / ds.n
        C[:] = ps[None, :]
        C[np.diag_indices(S)] -= 1.0
        return C
    cells = _cell_counts(ds)
    for l in range(L):
        if notion.kind is Notion.EQUALITY_OF_OPPORTUNITY and l not in notion.desirable_labels:
            continue
        ps_given_l = cells[l] / cells[l].sum()
        block = slice(l * S, (l + 1) * S)
        C[block, block] = ps_given_l[None, :]
        C[block, block] -= np.eye(S)
    return C


def group_error_rates(predictions, labels, group_of, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-group error rate and count; rate is NaN where the group is absent."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    group_of = np.asarray(group_of)
    counts = np.bincount(group_of, minlength=K)
    wrong = np.bincount(group_of, weights=(predictions != labels), minlength=K)
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(counts > 0, wrong / np.maximum(counts, 1), np.nan)
    return rates, counts


@dataclass(frozen=True, eq=False)
class GroupErrorEstimates:
    rates: np.ndarray
    seen: np.ndarray

    @classmethod
    def initial(cls, K: int) -> "GroupErrorEstimates":
        return cls(np.zeros(K), np.zeros(K, dtype=bool))


def merge_running(est: GroupErrorEstimates, batch_rates, batch_counts) -> GroupErrorEstimates:
    """Take the fresh batch rate for observed groups, keep the previous one elsewhere."""
    observed = np.asarray(batch_counts) > 0
    return GroupErrorEstimates(np.where(observed, batch_rates, est.rates), est.seen | observed)


def fairness_levels(C: np.ndarray, rates) -> np.ndarray:
    if isinstance(rates, GroupErrorEstimates):
        rates = rates.rates
    return C @ np.asarray(rates, dtype=np.float64)


def direct_fairness(predictions, labels, sensitive, notion: FairnessNotion, *,
                    label_count: int | None = None, sensitive_count: int | None = None) -> np.ndarray:
    """Fairness levels straight from the conditional-probability definitions.

    Independent of :func:`build_constants`; used for evaluation and as the
    oracle for the decomposition.
    """
    pred = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    s = np.asarray(sensitive, dtype=np.int64)
    L = int(y.max()) + 1 if label_count is None else label_count
    S = int(s.max()) + 1 if sensitive_count is None else sensitive_count
    correct = pred == y

    if notion.kind is Notion.ACCURACY_PARITY:
        overall = correct.mean()
        F = np.empty(S)
        for r in range(S):
            in_r = s == r
            if not in_r.any():
                raise DataError(f"no examples with sensitive value {r}")
            F[r] = correct[in_r].mean() - overall
        return F

    F = np.zeros(L * S)
    for l in range(L):
        if notion.kind is Notion.EQUALITY_OF_OPPORTUNITY and l not in notion.desirable_labels:
            continue
        with_l = y == l
        if not with_l.any():
            raise DataError(f"no examples with label {l}")
        err_l = np.mean(pred[with_l] != l)
        for r in range(S):
            cell = with_l & (s == r)
            if not cell.any():
                raise DataError(f"no examples with label {l} and sensitive value {r}")
            if notion.kind is Notion.EQUALIZED_ODDS:
                F[l * S + r] = err_l - np.mean(pred[cell] != l)
            else:
                F[l * S + r] = np.mean(pred[cell] == l) - np.mean(pred[with_l] == l)
    return F
