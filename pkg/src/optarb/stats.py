"""Error metrics and one-sided paired tests on per-round MSE differences."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

ALPHA = 0.05


def mse(pred, target) -> float:
    pred = np.asarray(pred, float).ravel()
    target = np.asarray(target, float).ravel()
    if pred.shape != target.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {target.size}")
    if pred.size == 0:
        raise ValueError("empty input")
    return float(np.mean((pred - target) ** 2))


def sign_test_p(diffs) -> float:
    """P(#positives >= observed) under Binomial(n_nonzero, 1/2); NaN when every diff is zero."""
    d = np.asarray(diffs, float)
    d = d[d != 0]
    if d.size == 0:
        return float("nan")
    return float(stats.binomtest(int((d > 0).sum()), d.size, 0.5, alternative="greater").pvalue)


def signed_rank_stat(diffs) -> tuple[float, np.ndarray]:
    """W+ (sum of midranks of positive diffs) and the midranks, zeros dropped."""
    d = np.asarray(diffs, float)
    d = d[d != 0]
    ranks = stats.rankdata(np.abs(d))
    return float(ranks[d > 0].sum()), ranks


def wilcoxon_exact_p(diffs) -> float:
    """Exact one-sided P(W+ >= observed) with each sign equally likely.

    Midranks are doubled to integers so ties are handled by the same
    subset-sum recursion.
    """
    w, ranks = signed_rank_stat(diffs)
    if ranks.size == 0:
        return float("nan")
    r2 = np.rint(2 * ranks).astype(int)
    total = int(r2.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in r2:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    w2 = int(round(2 * w))
    return float(sum(counts[w2:]) / 2 ** len(r2))


def symmetry_p(diffs) -> float:
    """Cabilio-Masaro test of symmetry about an unknown centre (two-sided, asymptotic)."""
    d = np.asarray(diffs, float)
    n = d.size
    s = d.std(ddof=1)
    if s == 0:
        return float("nan")
    z = math.sqrt(n) * (d.mean() - np.median(d)) / (s * math.sqrt(math.pi / 2 - 1))
    return float(2 * stats.norm.sf(abs(z)))


@dataclass
class PairedTests:
    n: int
    t_test_p: float
    wilcoxon_p: float
    sign_test_p: float
    normality_p: float
    normality_flag: bool       # True when normality is not rejected at 5%
    symmetry_p: float
    symmetry_flag: bool        # True when symmetry is not rejected at 5%
    sign_test_defined: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def paired_tests(diffs, exact_max_n: int = 25) -> PairedTests:
    """One-sided tests that the benchmark-minus-model differences are positive."""
    d = np.asarray(diffs, float)
    if d.size < 5:
        raise ValueError("need at least 5 differences")
    if np.all(d == d[0]):
        t_p = 0.0 if d[0] > 0 else (1.0 if d[0] < 0 else float("nan"))
    else:
        t_p = float(stats.ttest_1samp(d, 0.0, alternative="greater").pvalue)
    nonzero = int((d != 0).sum())
    if nonzero == 0:
        w_p = float("nan")
    elif nonzero <= exact_max_n:
        w_p = wilcoxon_exact_p(d)
    else:
        w_p = float(stats.wilcoxon(d, alternative="greater", method="approx").pvalue)
    s_p = sign_test_p(d)
    norm_p = float(stats.shapiro(d).pvalue) if np.ptp(d) > 0 else float("nan")
    sym_p = symmetry_p(d)
    return PairedTests(
        n=int(d.size), t_test_p=t_p, wilcoxon_p=w_p, sign_test_p=s_p,
        normality_p=norm_p, normality_flag=bool(norm_p >= ALPHA),
        symmetry_p=sym_p, symmetry_flag=bool(sym_p >= ALPHA),
        sign_test_defined=not math.isnan(s_p),
    )
