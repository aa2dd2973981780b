"""Friedman rank test with tie correction and the Iman-Davenport F statistic."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps


@dataclass
class RankMatrix:
    ranks: np.ndarray  # N repeated measures x k models
    tie_term: float = 0.0

    @property
    def n(self) -> int:
        return self.ranks.shape[0]

    @property
    def k(self) -> int:
        return self.ranks.shape[1]


@dataclass
class FriedmanResult:
    chi2: float
    chi2_corrected: float
    c: float
    F_F: float
    df1: int
    df2: int
    mean_ranks: np.ndarray
    p_value: float
    p_value_corrected: float
    F_undefined: bool = False


def rank_row(scores, higher_is_better: bool = True) -> tuple[np.ndarray, float]:
    """Ranks (1 = best) with averaged ties, plus the row's sum of t(t^2 - 1)."""
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    key = -s if higher_is_better else s
    order = np.argsort(key, kind="stable")
    ranks = np.empty(s.size)
    tie = 0.0
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and key[order[j + 1]] == key[order[i]]:
            j += 1
        t = j - i + 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        if t > 1:
            tie += t * (t * t - 1)
        i = j + 1
    return ranks, tie


def rank_models(scores, higher_is_better: bool = True) -> RankMatrix:
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    rows, total_tie = [], 0.0
    for row in scores:
        r, t = rank_row(row, higher_is_better)
        rows.append(r)
        total_tie += t
    return RankMatrix(np.vstack(rows), total_tie)


def chi2_sf(x: float, df: float) -> float:
    """Upper tail of the chi-square distribution, Q(df/2, x/2)."""
    if x < 0 or df <= 0:
        raise ValueError("chi2_sf needs x >= 0 and df > 0")
    if x == 0:
        return 1.0
    return regularized_gamma_q(df / 2.0, x / 2.0)


def regularized_gamma_q(a: float, x: float) -> float:
    """Q(a, x) by series (x < a + 1) or Lentz continued fraction."""
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_fraction(a, x)


def _gamma_p_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_fraction(a: float, x: float) -> float:
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def friedman_test(ranks: RankMatrix) -> FriedmanResult:
    """Friedman chi-square, tie-corrected chi-square and Iman-Davenport F.

    The mean ranks are taken column-wise from whatever rank rows are given,
    so rows of averaged (non-integer) ranks are accepted as-is.
    """
    n, k = ranks.n, ranks.k
    if n < 2 or k < 2:
        raise ValueError("friedman_test needs at least 2 rows and 2 models")
    mean_ranks = ranks.ranks.mean(axis=0)
    return _friedman_from_means(mean_ranks, n, ranks.tie_term)


def friedman_from_mean_ranks(mean_ranks, n: int, tie_term: float = 0.0) -> FriedmanResult:
    """Same statistic when only the k mean ranks over n measures are known."""
    mean_ranks = np.asarray(mean_ranks, dtype=np.float64)
    if n < 2 or mean_ranks.size < 2:
        raise ValueError("friedman test needs n >= 2 and k >= 2")
    return _friedman_from_means(mean_ranks, n, tie_term)


def _friedman_from_means(mean_ranks: np.ndarray, n: int, tie_term: float) -> FriedmanResult:
    k = mean_ranks.size
    chi2 = 12.0 * n / (k * (k + 1)) * float(np.sum(mean_ranks**2)) - 3.0 * n * (k + 1)
    if abs(chi2) < 1e-9:
        chi2 = 0.0
    c = 1.0 - tie_term / (n * k * (k * k - 1))
    if c > 0:
        corrected = chi2 / c
    else:
        # every row fully tied
        corrected = 0.0 if chi2 == 0 else math.inf
    df1, df2 = k - 1, (k - 1) * (n - 1)
    denom = n * (k - 1) - chi2
    undefined = denom <= 0
    f_f = math.inf if undefined else (n - 1) * chi2 / denom
    p = chi2_sf(max(chi2, 0.0), df1)
    p_corr = chi2_sf(corrected, df1) if math.isfinite(corrected) else 0.0
    return FriedmanResult(chi2, corrected, c, f_f, df1, df2, mean_ranks, p, p_corr, undefined)


def f_critical(alpha: float, df1: int, df2: int) -> float:
    return float(sps.f.ppf(1.0 - alpha, df1, df2))


def f_sf(x: float, df1: int, df2: int) -> float:
    return 0.0 if math.isinf(x) else float(sps.f.sf(x, df1, df2))


def iman_davenport_decision(result: FriedmanResult, alpha: float = 0.05) -> tuple[str, float]:
    crit = f_critical(alpha, result.df1, result.df2)
    return ("Reject" if result.F_F > crit else "Fail to reject"), crit


@dataclass
class MetricComparison:
    metric: str
    models: list[str]
    datasets: list[str]
    ranks: RankMatrix
    result: FriedmanResult


def compare_models(rows, higher_is_better: bool = True) -> list[MetricComparison]:
    """Per-metric Friedman tests from long ``(dataset, model, metric, value)`` rows.

    Repeated rows for one cell (several seeds) are averaged. Datasets missing
    any model for a metric are left out of that metric's test.
    """
    cells: dict[tuple[str, str, str], list[float]] = {}
    for r in rows:
        cells.setdefault((r["metric"], r["dataset"], r["model"]), []).append(float(r["value"]))
    out = []
    for metric in dict.fromkeys(k[0] for k in cells):
        models = sorted({k[2] for k in cells if k[0] == metric})
        datasets = sorted({k[1] for k in cells if k[0] == metric})
        complete = [d for d in datasets if all((metric, d, m) in cells for m in models)]
        if len(models) < 2 or len(complete) < 2:
            raise ValueError(
                f"metric {metric}: need >= 2 models and >= 2 complete datasets, "
                f"have {len(models)} model(s), {len(complete)} dataset(s)"
            )
        scores = np.array([[np.mean(cells[(metric, d, m)]) for m in models] for d in complete])
        ranks = rank_models(scores, higher_is_better)
        out.append(MetricComparison(metric, models, complete, ranks, friedman_test(ranks)))
    return out


def global_friedman(mean_rank_rows, textbook: bool = False) -> FriedmanResult:
    """Global test over N metrics, each row holding k per-metric mean ranks.

    By default the rows are used as rank rows directly and only their column
    means enter the statistic (no tie correction). ``textbook=True`` first
    re-ranks every row (lower mean rank is better) and applies the tie
    correction to those integer-style ranks.
    """
    rows = np.atleast_2d(np.asarray(mean_rank_rows, dtype=np.float64))
    if textbook:
        return friedman_test(rank_models(rows, higher_is_better=False))
    return friedman_from_mean_ranks(rows.mean(axis=0), rows.shape[0])
