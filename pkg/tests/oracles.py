"""Independent reference implementations used only by the tests.

Each one takes a different computational route from the library code:
least-squares fits on explicit dummy designs instead of sums of squares,
boolean-array confusion counts instead of a loop, and so on.
"""

from __future__ import annotations

import numpy as np


def ss_resid_lstsq(y: np.ndarray, D: np.ndarray) -> float:
    beta, *_ = np.linalg.lstsq(D, y, rcond=None)
    r = y - D @ beta
    return float(r @ r)


def anova_by_regression(x: np.ndarray) -> tuple[float, float, float]:
    """(SS_targets, SS_raters, SS_residual) from nested dummy-variable regressions."""
    x = np.asarray(x, float)
    n, k = x.shape
    y = x.ravel()
    target = np.repeat(np.eye(n), k, axis=0)
    rater = np.tile(np.eye(k), (n, 1))
    ones = np.ones((n * k, 1))
    ss0 = ss_resid_lstsq(y, ones)
    ss_t = ss_resid_lstsq(y, target)
    ss_r = ss_resid_lstsq(y, rater)
    ss_full = ss_resid_lstsq(y, np.hstack([target, rater[:, 1:]]))
    return ss0 - ss_t, ss0 - ss_r, ss_full


def icc3k_oracle(x: np.ndarray) -> float:
    n, k = np.shape(x)
    ss_t, _, ss_e = anova_by_regression(x)
    ms_t = ss_t / (n - 1)
    ms_e = ss_e / ((n - 1) * (k - 1))
    return (ms_t - ms_e) / ms_t


def r2_oracle(truth, pred) -> float:
    t = np.asarray(truth, float)
    q = np.asarray(pred, float)
    ss_tot = ss_resid_lstsq(t, np.ones((len(t), 1)))
    return 1.0 - float(np.dot(t - q, t - q)) / ss_tot


def mae_oracle(truth, pred) -> float:
    return float(np.sum(np.abs(np.subtract(truth, pred)))) / len(truth)


def confusion_oracle(truth, pred, threshold):
    t = np.asarray(truth) >= threshold
    q = np.asarray(pred) >= threshold
    tp = int(np.sum(t & q))
    fp = int(np.sum(~t & q))
    fn = int(np.sum(t & ~q))
    tn = int(np.sum(~t & ~q))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    acc = 1.0 - float(np.mean(t != q))
    return tp, fp, fn, tn, f1, acc


def ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.linalg.lstsq(X, y, rcond=None)[0]


def one_way_anova_components(y: np.ndarray) -> tuple[float, float]:
    """Closed-form (sigma_u^2, sigma_e^2) for a balanced m x n one-way layout."""
    m, n = y.shape
    means = y.mean(axis=1)
    msw = float(np.sum((y - means[:, None]) ** 2)) / (m * (n - 1))
    msb = n * float(np.sum((means - y.mean()) ** 2)) / (m - 1)
    return (msb - msw) / n, msw
