"""Predictive-accuracy criteria computed per station against test maxima.

Three indices summarize how model quantiles track the empirical return
levels of a held-out maxima sample, restricted to observations whose
empirical return time exceeds a threshold:

* fractional squared error: mean over qualifying observations of the
  root-mean-square (over draws) relative quantile error,
* mean bias: the same double average without the square,
* mean 90% credible width: average distance between the 5% and 95%
  empirical quantiles of the per-draw quantile values.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "EvalResult",
    "empirical_return_times",
    "fse",
    "bias_and_width",
    "evaluate_site",
    "write_eval_report",
]

#: quantile provider: probabilities (k,) -> per-draw quantiles (B, k)
QuantileFn = Callable[[np.ndarray], np.ndarray]

DEFAULT_RETURN_TIME_THRESHOLD = 2.0


@dataclass(frozen=True)
class EvalResult:
    station: str
    fse: float | None
    bias: float | None
    width: float | None
    m_t: int
    threshold: float
    n_maxima: int


def empirical_return_times(maxima) -> tuple[np.ndarray, np.ndarray]:
    """Plotting positions ``p = rank/(M+1)`` (average ranks on ties) and the
    corresponding return times ``T = 1/(1-p)``."""
    maxima = np.asarray(maxima, dtype=float)
    if maxima.size < 1:
        raise ValueError("need at least one test maximum")
    ranks = rankdata(maxima, method="average")
    p = ranks / (maxima.size + 1.0)
    return p, 1.0 / (1.0 - p)


def _qualifying(maxima, threshold):
    maxima = np.asarray(maxima, dtype=float)
    p, t = empirical_return_times(maxima)
    mask = t > threshold
    return maxima, p, mask


def fse(
    quantile_fn: QuantileFn,
    maxima,
    threshold: float = DEFAULT_RETURN_TIME_THRESHOLD,
) -> float | None:
    """Fractional squared error; ``None`` when no observation qualifies.

    The square root sits inside the outer average: each qualifying
    observation contributes the RMS over draws of its relative error.
    """
    maxima, p, mask = _qualifying(maxima, threshold)
    if not mask.any():
        return None
    q = quantile_fn(p[mask])  # (B, m)
    rel = (q - maxima[mask]) / maxima[mask]
    return float(np.mean(np.sqrt(np.mean(rel * rel, axis=0))))


def bias_and_width(
    quantile_fn: QuantileFn,
    maxima,
    threshold: float = DEFAULT_RETURN_TIME_THRESHOLD,
) -> tuple[float, float] | None:
    """Signed mean relative error and mean 90% credible-interval width;
    ``None`` when no observation qualifies."""
    maxima, p, mask = _qualifying(maxima, threshold)
    if not mask.any():
        return None
    q = quantile_fn(p[mask])
    rel = (q - maxima[mask]) / maxima[mask]
    bias = float(np.mean(np.mean(rel, axis=0)))
    width = float(np.mean(np.quantile(q, 0.95, axis=0) - np.quantile(q, 0.05, axis=0)))
    return bias, width


def evaluate_site(
    station: str,
    quantile_fn: QuantileFn,
    maxima,
    threshold: float = DEFAULT_RETURN_TIME_THRESHOLD,
) -> EvalResult:
    """All three criteria for one station, sharing a single quantile pass."""
    maxima, p, mask = _qualifying(maxima, threshold)
    m_t = int(mask.sum())
    if m_t == 0:
        return EvalResult(station, None, None, None, 0, threshold, maxima.size)
    q = quantile_fn(p[mask])
    rel = (q - maxima[mask]) / maxima[mask]
    return EvalResult(
        station=station,
        fse=float(np.mean(np.sqrt(np.mean(rel * rel, axis=0)))),
        bias=float(np.mean(np.mean(rel, axis=0))),
        width=float(np.mean(np.quantile(q, 0.95, axis=0) - np.quantile(q, 0.05, axis=0))),
        m_t=m_t,
        threshold=threshold,
        n_maxima=maxima.size,
    )


def write_eval_report(results: Sequence[tuple[str, EvalResult]], path: str | Path) -> Path:
    """Columnar report ``site,model,fse,bias,width,m_T`` with one summary row
    of medians across sites per model."""
    path = Path(path)

    def fmt(v):
        return "" if v is None else repr(float(v))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["site", "model", "fse", "bias", "width", "m_T"])
        by_model: dict[str, list[EvalResult]] = {}
        for model, res in results:
            writer.writerow([res.station, model, fmt(res.fse), fmt(res.bias), fmt(res.width), res.m_t])
            by_model.setdefault(model, []).append(res)
        for model in sorted(by_model):
            rows = [r for r in by_model[model] if r.fse is not None]
            if not rows:
                continue
            writer.writerow(
                [
                    "median",
                    model,
                    fmt(float(np.median([r.fse for r in rows]))),
                    fmt(float(np.median([r.bias for r in rows]))),
                    fmt(float(np.median([r.width for r in rows]))),
                    int(np.median([r.m_t for r in rows])),
                ]
            )
    return path
