"""Pairwise logistic-regression DIF tests with a majority rule across groups.

For a pair of groups and each item, three nested logistic models of the item
response on the total score ``S`` and a group indicator ``G`` are fitted::

    logit(pi) = a + b1*S                       (baseline)
    logit(pi) = a + b1*S + b2*G                (uniform DIF)
    logit(pi) = a + b1*S + b2*G + b3*S*G       (non-uniform DIF)

Likelihood-ratio tests between consecutive models give the uniform and
non-uniform p-values.  A (group, item) cell is flagged when a strict majority
of that group's Benjamini-Hochberg adjusted comparisons are significant.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc

from .errors import RankDeficientError
from .simgen import ResponseDataset

log = logging.getLogger(__name__)

MAX_ITER = 50
TOL = 1e-8
RIDGE = 1e-10
SEPARATION_BOUND = 30.0


@dataclass
class LogisticFit:
    coefficients: np.ndarray
    log_likelihood: float
    converged: bool
    iterations: int
    separated: bool = False


def _log_likelihood(eta, y):
    # sum of y*eta - log(1 + exp(eta)), stable for large |eta|
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(features, labels) -> LogisticFit:
    """Maximum-likelihood logistic regression by IRLS.

    ``features`` excludes the intercept column, which is always added first.
    """
    y = np.asarray(labels, dtype=np.float64).ravel()
    F = np.asarray(features, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if F.shape[0] != y.size:
        raise ValueError(f"{F.shape[0]} feature rows vs {y.size} labels")
    X = np.column_stack([np.ones(y.size), F]) if F.size else np.ones((y.size, 1))
    p = X.shape[1]
    if np.linalg.matrix_rank(X) < p:
        raise RankDeficientError(f"design matrix with {p} columns is rank deficient")

    beta = np.zeros(p)
    eta = X @ beta
    ll = _log_likelihood(eta, y)
    ridge = RIDGE * np.eye(p)
    for it in range(1, MAX_ITER + 1):
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = mu * (1.0 - mu)
        step = np.linalg.solve(X.T @ (X * w[:, None]) + ridge, X.T @ (y - mu))
        # step halving keeps the likelihood from decreasing
        t = 1.0
        while True:
            new_beta = beta + t * step
            new_eta = X @ new_beta
            new_ll = _log_likelihood(new_eta, y)
            if new_ll >= ll - 1e-12 or t < 1e-8:
                break
            t *= 0.5
        change = float(np.max(np.abs(new_beta - beta)))
        improved = new_ll > ll + 1e-12
        beta, eta, ll = new_beta, new_eta, new_ll
        if change < TOL:
            return LogisticFit(beta, ll, True, it)
        if np.max(np.abs(beta)) > SEPARATION_BOUND and improved:
            return LogisticFit(beta, ll, False, it, separated=True)
    return LogisticFit(beta, ll, False, MAX_ITER)


def lrt_pvalue(ll_restricted: float, ll_full: float, df: int) -> float:
    """Upper chi-square tail at deviance ``2 (ll_full - ll_restricted)``."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    deviance = max(0.0, 2.0 * (ll_full - ll_restricted))
    return float(gammaincc(df / 2.0, deviance / 2.0))


def bh_adjust(pvalues) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values, in input order."""
    p = np.asarray(pvalues, dtype=np.float64)
    n = p.size
    if n == 0:
        return p.copy()
    order = np.argsort(p, kind="mergesort")
    scaled = p[order] * n / np.arange(1, n + 1)
    adjusted = np.minimum(1.0, np.minimum.accumulate(scaled[::-1])[::-1])
    out = np.empty(n)
    out[order] = adjusted
    return out


@dataclass
class PairwiseResult:
    group_a: int
    group_b: int
    per_item_p_uniform: np.ndarray
    per_item_p_nonuniform: np.ndarray
    warnings: list = field(default_factory=list)


def _item_pvalues(score, group, y):
    """Uniform and non-uniform p-values for one item; ``None`` when a fit fails."""
    fits = []
    for features in (score[:, None], np.column_stack([score, group]),
                     np.column_stack([score, group, score * group])):
        fits.append(fit_logistic(features, y))
    if not all(f.converged for f in fits):
        return None
    ll4, ll5, ll6 = (f.log_likelihood for f in fits)
    return lrt_pvalue(ll4, ll5, 1), lrt_pvalue(ll5, ll6, 1)


def pairwise_dif(dataset: ResponseDataset, group_a: int, group_b: int) -> PairwiseResult:
    """Logistic DIF tests between two groups for every item.

    Items whose fits fail to converge, separate, or are rank deficient get
    p = 1 for both tests and a warning entry.
    """
    for g in (group_a, group_b):
        if not 0 <= g < dataset.n_groups:
            raise ValueError(f"group {g} not in dataset with {dataset.n_groups} groups")
    lo, hi = sorted((group_a, group_b))
    rows = np.vstack([dataset.group_block(lo), dataset.group_block(hi)]).astype(np.float64)
    group = np.r_[np.zeros(dataset.n_per_group), np.ones(dataset.n_per_group)]
    score = rows.sum(axis=1)
    p_u = np.ones(dataset.n_items)
    p_nu = np.ones(dataset.n_items)
    warnings = []
    for i in range(dataset.n_items):
        reason = "fit did not converge"
        try:
            result = _item_pvalues(score, group, rows[:, i])
        except RankDeficientError as exc:
            result, reason = None, str(exc)
        if result is None:
            warnings.append(f"groups {lo},{hi} item {i}: {reason}")
            continue
        p_u[i], p_nu[i] = result
    for w in warnings:
        log.debug(w)
    return PairwiseResult(group_a, group_b, p_u, p_nu, warnings)


@dataclass
class FlagMatrix:
    threshold_flags: np.ndarray
    loading_flags: np.ndarray
    warnings: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["group,item,threshold_flag,loading_flag"]
        G, I = self.threshold_flags.shape
        for g in range(G):
            for i in range(I):
                lines.append(f"{g + 1},{i + 1},{int(self.threshold_flags[g, i])},{int(self.loading_flags[g, i])}")
        return "\n".join(lines) + "\n"


def majority_rule(count, n_comparisons: int):
    """Strict majority of a group's pairwise comparisons."""
    return np.asarray(count) > n_comparisons / 2.0


def majority_flags(dataset: ResponseDataset, alpha: float = 0.01) -> FlagMatrix:
    G, I = dataset.n_groups, dataset.n_items
    if G < 2:
        raise ValueError("majority flagging needs at least two groups")
    p_u = np.ones((G, G, I))
    p_nu = np.ones((G, G, I))
    warnings = []
    for a, b in itertools.combinations(range(G), 2):
        res = pairwise_dif(dataset, a, b)
        p_u[a, b] = p_u[b, a] = res.per_item_p_uniform
        p_nu[a, b] = p_nu[b, a] = res.per_item_p_nonuniform
        warnings.extend(res.warnings)

    def flags(p):
        out = np.zeros((G, I), dtype=bool)
        for g in range(G):
            others = [h for h in range(G) if h != g]
            for i in range(I):
                adjusted = bh_adjust(p[g, others, i])
                out[g, i] = majority_rule(np.sum(adjusted < alpha), G - 1)
        return out

    return FlagMatrix(flags(p_u), flags(p_nu), warnings)
