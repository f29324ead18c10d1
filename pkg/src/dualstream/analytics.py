"""Long-tail analysis and QoE aggregation.

The delay tail above a threshold ``x_high`` is fit as a shifted power law
``density = k * (x - x_high) ** -alpha`` via log-log regression on binned
data; integrating gives the closed-form tail mass
``P(X >= x) = k / (alpha - 1) * (x - x_high) ** -(alpha - 1)`` used for the
tail-reduction comparisons between runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import AnalyticsConfig
from .errors import DomainError, InsufficientDataError, SchemaError


@dataclass
class TailFit:
    k: float
    alpha: float
    x_high: float
    n_tail: int
    r2: float
    integrable: bool = True

    def as_dict(self) -> dict:
        return {"k": self.k, "alpha": self.alpha, "x_high": self.x_high,
                "n_tail": self.n_tail, "r2": self.r2, "integrable": self.integrable}


def fit_power_tail(samples, x_high: float, cfg: AnalyticsConfig | None = None) -> TailFit:
    """Fit the shifted power law to the samples above ``x_high``.

    Density is estimated on log-spaced bins of the excess over the threshold
    (bins thinner than the minimum occupancy are dropped), then slope and
    intercept come from a count-weighted least squares in log-log space.
    """
    cfg = cfg or AnalyticsConfig()
    samples = np.asarray(list(samples), dtype=float)
    excess = samples[samples > x_high] - x_high
    n_total = len(samples)
    if len(excess) < cfg.min_tail_samples:
        raise InsufficientDataError(
            f"only {len(excess)} samples above x_high={x_high}, need {cfg.min_tail_samples}")
    lo = max(excess.min(), 1e-9)
    hi = excess.max()
    if hi <= lo * (1.0 + 1e-9):
        raise InsufficientDataError("tail samples span a single point")
    edges = np.geomspace(lo * 0.999, hi * 1.001, cfg.tail_bins + 1)
    counts, edges = np.histogram(excess, bins=edges)
    widths = np.diff(edges)
    centers = np.sqrt(edges[:-1] * edges[1:])
    keep = counts >= cfg.min_bin_count
    if keep.sum() < cfg.min_bins:
        raise InsufficientDataError(
            f"only {int(keep.sum())} usable bins, need {cfg.min_bins}")
    density = counts[keep] / (n_total * widths[keep])
    x = np.log(centers[keep])
    y = np.log(density)
    w = counts[keep].astype(float)
    wx = np.average(x, weights=w)
    wy = np.average(y, weights=w)
    slope = np.sum(w * (x - wx) * (y - wy)) / np.sum(w * (x - wx) ** 2)
    intercept = wy - slope * wx
    pred = intercept + slope * x
    ss_res = np.sum(w * (y - pred) ** 2)
    ss_tot = np.sum(w * (y - wy) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    alpha = -float(slope)
    return TailFit(k=float(math.exp(intercept)), alpha=alpha, x_high=float(x_high),
                   n_tail=int(len(excess)), r2=float(r2), integrable=alpha > 1.0)


def tail_mass(fit: TailFit, x: float) -> float:
    """Closed-form ``P(X >= x)`` of the fitted tail."""
    if x <= fit.x_high:
        raise DomainError(f"x={x} must exceed x_high={fit.x_high}")
    if fit.alpha <= 1.0:
        raise DomainError("tail mass undefined for alpha <= 1 (non-integrable)")
    return fit.k / (fit.alpha - 1.0) * (x - fit.x_high) ** (-(fit.alpha - 1.0))


def tail_slash(fit_baseline: TailFit, fit_treatment: TailFit, x: float) -> float:
    """Fractional reduction in tail mass at ``x`` versus the baseline fit."""
    return 1.0 - tail_mass(fit_treatment, x) / tail_mass(fit_baseline, x)


def sample_power_tail(n: int, alpha: float, x_high: float, x_low_offset: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF samples from the shifted power law (testing oracle)."""
    if alpha <= 1.0:
        raise DomainError("alpha must exceed 1 for a normalizable tail")
    u = rng.random(n)
    return x_high + x_low_offset * (1.0 - u) ** (-1.0 / (alpha - 1.0))


def percentile(samples, p: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest sample."""
    data = sorted(samples)
    if not data:
        raise InsufficientDataError("empty sample list")
    if not 0.0 < p < 100.0:
        raise DomainError("percentile must be in (0, 100)")
    rank = max(1, math.ceil(p / 100.0 * len(data)))
    return float(data[rank - 1])


def psnr_proxy(delta_qp: float, per_qp_db: float = 0.89) -> float:
    """Clarity cost of a quantizer-index shift, in dB."""
    if not math.isfinite(delta_qp):
        raise DomainError("delta_qp must be finite")
    return per_qp_db * delta_qp


REPORT_COLUMNS = ["label", "fps", "stall_rate_pct", "d_trans_ms", "d_pacer_ms",
                  "d_jitter_ms", "rtt_ms", "loss_pct", "d_e2e_mean_ms",
                  "d_e2e_p97_ms", "psnr_db"]


def qoe_report(frame_rows: list[dict], summary: dict, label: str = "run") -> dict:
    """Aggregate one run into the standard QoE table row."""
    required = {"d_trans", "d_pacer", "d_jitter", "d_e2e", "rendered"}
    if frame_rows:
        missing = required - set(frame_rows[0])
        if missing:
            raise SchemaError(f"frame rows missing columns: {sorted(missing)}")
    rendered = [r for r in frame_rows if r["rendered"]]
    d_e2e = [r["d_e2e"] for r in rendered]
    row = {
        "label": label,
        "fps": summary.get("fps", 0.0),
        "stall_rate_pct": summary.get("stall_rate_pct", 0.0),
        "d_trans_ms": float(np.mean([r["d_trans"] for r in rendered])) if rendered else 0.0,
        "d_pacer_ms": float(np.mean([r["d_pacer"] for r in rendered])) if rendered else 0.0,
        "d_jitter_ms": float(np.mean([r["d_jitter"] for r in rendered])) if rendered else 0.0,
        "rtt_ms": summary.get("rtt_ms", 0.0),
        "loss_pct": summary.get("loss_pct", 0.0),
        "d_e2e_mean_ms": float(np.mean(d_e2e)) if d_e2e else 0.0,
        "d_e2e_p97_ms": percentile(d_e2e, 97.0) if d_e2e else 0.0,
        "psnr_db": summary.get("psnr_db", 0.0),
    }
    return row


def default_x_high(samples, cfg: AnalyticsConfig | None = None) -> float:
    cfg = cfg or AnalyticsConfig()
    return percentile(samples, cfg.x_high_percentile)


def empirical_ccdf(samples, points: np.ndarray) -> np.ndarray:
    data = np.sort(np.asarray(list(samples), dtype=float))
    n = len(data)
    return np.array([(data >= x).sum() / n for x in points])
