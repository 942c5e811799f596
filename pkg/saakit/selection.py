"""
Sample selection: per-sample EMA of the consistency loss (h), an epoch threshold over h, and the
naive marker f = (h <= threshold).
"""
import logging
from typing import Iterable, Optional

import numpy as np

from saakit.errors import SaaError
from saakit.model import MarkerUpdate, OtsuResult, SelectionPolicy

logger = logging.getLogger(__name__)

THRESHOLD_POLICIES = ('otsu', 'fixed', 'prop')


class SampleHistory:
    """
    Historical loss store indexed by stable unlabeled sample id (0 .. size-1).

    h: EMA of recorded losses (float64), f: naive marker, observed: number of recorded losses.
    """

    def __init__(self, size: int = 0, decay: float = 0.999):
        if not 0.0 <= decay < 1.0:
            raise ValueError(f'decay {decay} must be in [0, 1)')
        self.decay = decay
        self.h = np.zeros(0, dtype=np.float64)
        self.f = np.zeros(0, dtype=bool)
        self.observed = np.zeros(0, dtype=np.int64)
        if size:
            self.register(size)

    @property
    def size(self) -> int:
        return len(self.h)

    def register(self, count: int) -> range:
        """
        Registers `count` new ids and returns them.
        """
        start = self.size
        self.h = np.concatenate([self.h, np.zeros(count, dtype=np.float64)])
        self.f = np.concatenate([self.f, np.zeros(count, dtype=bool)])
        self.observed = np.concatenate([self.observed, np.zeros(count, dtype=np.int64)])
        return range(start, start + count)

    def record_loss(self, sample_id: int, loss: float):
        if not 0 <= sample_id < self.size:
            raise SaaError(f'sample id {sample_id} is not registered')
        loss = float(loss)
        if not np.isfinite(loss) or loss < 0:
            raise SaaError(f'loss {loss} for sample {sample_id} must be finite and >= 0')

        if self.observed[sample_id] == 0:
            self.h[sample_id] = loss
        else:
            self.h[sample_id] = self.decay * self.h[sample_id] + (1.0 - self.decay) * loss
        self.observed[sample_id] += 1

    def record_losses(self, sample_ids: Iterable[int], losses: Iterable[float]):
        # in order, once per occurrence, so repeated ids in one batch are applied twice
        for sample_id, loss in zip(sample_ids, losses):
            self.record_loss(int(sample_id), loss)

    def copy(self) -> 'SampleHistory':
        res = SampleHistory(0, self.decay)
        res.h, res.f, res.observed = self.h.copy(), self.f.copy(), self.observed.copy()
        return res


def otsu_threshold(values, bins: int = 256) -> OtsuResult:
    """
    Histogram the values into `bins` equal-width bins over [min, max] and return the interior bin
    edge that maximises the between-class variance w0 * w1 * (mu0 - mu1)^2.

    A value lying exactly on an edge belongs to the lower bin, so class 0 is exactly
    {v <= threshold}. Class statistics use bin centres; since centres are affine in the bin index,
    the variance is compared on integer bin indices, exactly. Ties go to the lowest edge.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError('otsu_threshold needs at least one value')

    lo, hi = float(values.min()), float(values.max())
    if values.size < 2 or lo == hi:
        return OtsuResult(lo, True)

    edges = otsu_edges(lo, hi, bins)
    counts = np.bincount(np.searchsorted(edges, values, side='left'), minlength=bins)
    k = _best_split([int(c) for c in counts])
    return OtsuResult(float(edges[k - 1]), False)


def otsu_edges(lo: float, hi: float, bins: int) -> np.ndarray:
    """
    The bins - 1 interior edges; edge k (1-based) is lo + k * (hi - lo) / bins.
    """
    return lo + (hi - lo) * np.arange(1, bins, dtype=np.float64) / bins


def between_class_score(n0: int, s0: int, n1: int, s1: int):
    """
    Between-class variance of two classes given counts and sums of bin indices, up to the positive
    constant factor 1 / (N^2 * width^2), as an exact (numerator, denominator) pair.
    """
    d = s0 * n1 - s1 * n0
    return d * d, n0 * n1


def _best_split(counts) -> int:
    total_n = sum(counts)
    total_s = sum(i * c for i, c in enumerate(counts))
    best_k, best = None, (-1, 1)
    n0 = s0 = 0
    for k in range(1, len(counts)):
        n0 += counts[k - 1]
        s0 += (k - 1) * counts[k - 1]
        n1, s1 = total_n - n0, total_s - s0
        if n0 == 0 or n1 == 0:
            continue
        num, den = between_class_score(n0, s0, n1, s1)
        # num / den > best_num / best_den, in integers
        if best_k is None or num * best[1] > best[0] * den:
            best_k, best = k, (num, den)

    return best_k


def update_markers(history: SampleHistory, policy: SelectionPolicy, rng: Optional[np.random.Generator] = None,
                   bins: int = 256, drawn: Optional[np.ndarray] = None) -> MarkerUpdate:
    """
    Refreshes the markers from the current h. Only observed ids take part in threshold policies,
    unobserved ids stay unmarked. 'all' and 'random' act on every registered id.

    :param drawn: ids recorded since the last refresh; under a threshold policy the other ids keep
        their previous marker. None refreshes every id.
    """
    previous = history.f.copy()
    seen = history.observed > 0
    marked = np.zeros(history.size, dtype=bool)
    tau, degenerate = float('nan'), False

    if policy.kind == 'none':
        pass
    elif policy.kind == 'all':
        marked[:] = True
    elif policy.kind == 'random':
        if rng is None:
            raise ValueError('random selection needs a rng')
        count = int(np.floor(policy.value * history.size))
        marked[rng.permutation(history.size)[:count]] = True
    elif policy.kind == 'fixed':
        tau = policy.value
        marked = seen & (history.h <= tau)
    elif policy.kind == 'prop':
        ids = np.flatnonzero(seen)
        count = int(np.floor(policy.value * len(ids)))
        # stable sort keeps ties ordered by id
        order = ids[np.argsort(history.h[ids], kind='stable')]
        marked[order[:count]] = True
        if count:
            tau = float(history.h[order[count - 1]])
    elif policy.kind == 'otsu':
        ids = np.flatnonzero(seen)
        if len(ids) == 0:
            degenerate = True
        else:
            result = otsu_threshold(history.h[ids], bins)
            tau, degenerate = result.threshold, result.degenerate
            if not degenerate:
                marked = seen & (history.h <= tau)
    else:
        raise ValueError(f'unknown selection policy {policy}')

    if policy.kind in THRESHOLD_POLICIES and drawn is not None and not degenerate:
        marked = np.where(np.asarray(drawn, dtype=bool), marked, previous)

    if degenerate:
        logger.info('otsu partition degenerate, no sample marked naive')

    history.f = marked
    return MarkerUpdate(tau, degenerate, int(marked.sum()), int((marked != previous).sum()))


def naive_fraction(history: SampleHistory) -> float:
    if history.size == 0:
        raise ValueError('naive_fraction of an empty history')
    return float(history.f.sum()) / history.size


def summarize_history(history: SampleHistory, bins: int = 256) -> dict:
    """
    Counts, quantiles of h over observed ids and the Otsu split the current h would give.
    """
    seen = history.observed > 0
    res = {
        'size': history.size,
        'observed': int(seen.sum()),
        'naive': int(history.f.sum()),
        'naive_fraction': naive_fraction(history) if history.size else 0.0,
        'observations': int(history.observed.sum()),
    }
    if seen.any():
        h = history.h[seen]
        for q in (0.0, 0.25, 0.5, 0.75, 1.0):
            res[f'h_q{int(q * 100)}'] = float(np.quantile(h, q))
        otsu = otsu_threshold(h, bins)
        res['otsu_tau'] = otsu.threshold
        res['otsu_degenerate'] = otsu.degenerate
        res['otsu_below'] = int((h <= otsu.threshold).sum()) if not otsu.degenerate else 0

    return res
