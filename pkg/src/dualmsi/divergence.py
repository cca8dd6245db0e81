"""KL-divergence adulteration metric and the linear functional map.

The divergence is computed between smoothed histograms of a scalar
feature (by default the first LDA component of the transmittance matrix,
configurable to a single band).  The pooled 0%-level distribution is the
reference; each replicate contributes one (level, KL) point, and an
ordinary least-squares line maps adulteration percentage to divergence.

KL uses natural log (nats).  Every bin receives a small additive epsilon
before normalization so the divergence is always finite; this is a
documented deviation from the bare formula.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Mode, Sample
from .errors import EmptyDataError, ValidationError
from .features import build_matrix, lda_fit


@dataclass(frozen=True)
class Distribution:
    """Normalized histogram: n+1 increasing edges, n strictly positive probs."""

    bin_edges: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if edges.ndim != 1 or probs.ndim != 1 or edges.size != probs.size + 1:
            raise ValidationError("need n+1 edges for n probabilities")
        if np.any(np.diff(edges) <= 0):
            raise ValidationError("bin edges must be strictly increasing")
        if probs.min() < 0 or abs(probs.sum() - 1.0) > 1e-12:
            raise ValidationError("probabilities must be >= 0 and sum to 1")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "probs", probs)


def histogram(
    values,
    n_bins: int = 64,
    value_range: tuple[float, float] = (0.0, 1.0),
    epsilon: float = 1e-9,
) -> Distribution:
    """Smoothed probability histogram of a 1-D value collection.

    Bins are right-exclusive except the last; values outside the range
    are clipped into the edge bins.  ``epsilon`` is added to every bin
    before renormalizing, so all probabilities are strictly positive.
    """
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise EmptyDataError("histogram of no values")
    lo, hi = float(value_range[0]), float(value_range[1])
    if not hi > lo:
        raise ValidationError(f"bad histogram range ({lo}, {hi})")
    if n_bins < 1:
        raise ValidationError("n_bins must be >= 1")
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive (smoothing keeps KL finite)")
    clipped = np.clip(arr, lo, hi)
    counts, edges = np.histogram(clipped, bins=n_bins, range=(lo, hi))
    smoothed = counts.astype(np.float64) + epsilon
    return Distribution(bin_edges=edges, probs=smoothed / smoothed.sum())


def kl_divergence(p: Distribution, q: Distribution) -> float:
    """KL(P || Q) in nats; zero-probability P bins contribute nothing."""
    if p.bin_edges.shape != q.bin_edges.shape or not np.array_equal(
        p.bin_edges, q.bin_edges
    ):
        raise ValidationError("distributions must share identical bin edges")
    mask = p.probs > 0
    return float(np.sum(p.probs[mask] * np.log(p.probs[mask] / q.probs[mask])))


# --------------------------------------------------------------------------
# Feature extractors: sample -> 1-D values the distributions are built on
# --------------------------------------------------------------------------


def lda_feature_extractor(
    samples: Sequence[Sample], mode: Mode = Mode.TRANSMITTANCE, block: int = 10
) -> Callable[[Sample], np.ndarray]:
    """First-LDA-component extractor fitted on the given samples' matrix."""
    matrix = build_matrix([s for s in samples if s.cube.mode is mode], mode, block=block)
    proj = lda_fit(matrix, k=1)

    def extract(sample: Sample) -> np.ndarray:
        from .features import superpixels

        rows = superpixels(sample.cube, block=block)
        return (rows - proj.mean) @ proj.components[0]

    return extract


def band_feature_extractor(wavelength_nm: int, block: int = 10) -> Callable[[Sample], np.ndarray]:
    """Single-band superpixel extractor (raw-band divergence mode)."""

    def extract(sample: Sample) -> np.ndarray:
        from .features import superpixels

        rows = superpixels(sample.cube, block=block)
        idx = sample.cube.band_set.index(wavelength_nm)
        return rows[:, idx]

    return extract


def adulteration_curve(
    samples: Sequence[Sample],
    feature_extractor: Callable[[Sample], np.ndarray] | None = None,
    reference_label: float = 0.0,
    n_bins: int = 24,
    epsilon: float = 1e-9,
) -> list[tuple[float, float]]:
    """One (adulteration %, KL) point per replicate sample.

    The reference distribution pools every sample at ``reference_label``;
    the histogram range is the global span of the extracted feature so
    all distributions share bin edges.  Reference replicates are included
    (their KL is the within-class noise floor).
    """
    samples = list(samples)
    if not samples:
        raise EmptyDataError("no samples")
    extractor = feature_extractor or lda_feature_extractor(samples)
    values = {s.id: np.asarray(extractor(s), dtype=np.float64).ravel() for s in samples}
    pool = np.concatenate(list(values.values()))
    lo, hi = float(pool.min()), float(pool.max())
    if hi <= lo:
        hi = lo + 1e-9
    span = (lo, hi)

    reference = [
        values[s.id] for s in samples if s.label.adulteration_pct == reference_label
    ]
    if not reference:
        raise ValidationError(f"no samples at reference level {reference_label}")
    p = histogram(np.concatenate(reference), n_bins=n_bins, value_range=span, epsilon=epsilon)

    points = []
    for sample in samples:
        if sample.label.adulteration_pct is None:
            raise ValidationError(f"sample {sample.id} has no adulteration label")
        q = histogram(values[sample.id], n_bins=n_bins, value_range=span, epsilon=epsilon)
        points.append((sample.label.adulteration_pct, kl_divergence(p, q)))
    return points


@dataclass(frozen=True)
class FunctionalMap:
    """Fitted linear map from adulteration % to divergence."""

    slope: float
    intercept: float
    r_squared: float

    def __call__(self, x: float) -> float:
        return self.slope * x + self.intercept

    def to_json(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared}


def fit_linear(points: Sequence[tuple[float, float]]) -> FunctionalMap:
    """Ordinary least squares over (x, y) points with R^2 = 1 - SSres/SStot.

    A constant-y input fits slope 0 with R^2 defined as 0.
    """
    pts = list(points)
    if len(pts) < 2:
        raise ValidationError("need at least 2 points to fit a line")
    x = np.array([p[0] for p in pts], dtype=np.float64)
    y = np.array([p[1] for p in pts], dtype=np.float64)
    if np.unique(x).size < 2:
        raise ValidationError("need at least 2 distinct x values")
    x_mean, y_mean = x.mean(), y.mean()
    sxx = ((x - x_mean) ** 2).sum()
    sxy = ((x - x_mean) * (y - y_mean)).sum()
    slope = sxy / sxx
    intercept = y_mean - slope * x_mean
    ss_res = ((y - (slope * x + intercept)) ** 2).sum()
    ss_tot = ((y - y_mean) ** 2).sum()
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return FunctionalMap(slope=float(slope), intercept=float(intercept), r_squared=float(r_squared))


def median_curve(points: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Per-level median KL, level-sorted; the summary the line is often fit on."""
    levels = sorted({p[0] for p in points})
    return [
        (level, float(np.median([kl for lv, kl in points if lv == level])))
        for level in levels
    ]


#: Frozen reference curve for the coconut-oil functional map: 9 levels x 8
#: replicates of (adulteration %, KL divergence).  fit_linear over these
#: points reproduces slope 1.0497, intercept -1.001, R^2 0.9558; they
#: serve as the regression fixture for the oil study's published map.
REFERENCE_OIL_POINTS: tuple[tuple[float, float], ...] = (
    (0.0, 0.250521), (0.0, 0.606790), (0.0, 0.481907), (0.0, 0.741697),
    (0.0, 1.078900), (0.0, 0.573035), (0.0, 0.604304), (0.0, 1.414845),
    (5.0, 2.293758), (5.0, 3.319942), (5.0, 4.429959), (5.0, 4.653564),
    (5.0, 3.421543), (5.0, 3.638818), (5.0, 4.680160), (5.0, 3.162255),
    (10.0, 8.489514), (10.0, 12.231561), (10.0, 7.656429), (10.0, 7.580109),
    (10.0, 8.974195), (10.0, 8.112862), (10.0, 7.354100), (10.0, 9.049232),
    (15.0, 15.593018), (15.0, 16.775034), (15.0, 10.043280), (15.0, 11.345723),
    (15.0, 15.555612), (15.0, 15.297683), (15.0, 13.968130), (15.0, 13.917521),
    (20.0, 16.024179), (20.0, 21.289300), (20.0, 23.109351), (20.0, 17.539981),
    (20.0, 22.925462), (20.0, 16.413951), (20.0, 17.708264), (20.0, 21.333511),
    (25.0, 24.527434), (25.0, 23.881065), (25.0, 25.341409), (25.0, 31.581773),
    (25.0, 21.048756), (25.0, 21.527007), (25.0, 24.451449), (25.0, 28.233107),
    (30.0, 32.100611), (30.0, 22.343951), (30.0, 36.161330), (30.0, 29.444694),
    (30.0, 31.385896), (30.0, 31.012515), (30.0, 31.341316), (30.0, 31.449687),
    (35.0, 41.780420), (35.0, 38.732825), (35.0, 37.745341), (35.0, 35.544815),
    (35.0, 31.277527), (35.0, 29.313524), (35.0, 39.228179), (35.0, 35.065369),
    (40.0, 37.969747), (40.0, 36.862865), (40.0, 48.389965), (40.0, 45.173570),
    (40.0, 43.469042), (40.0, 44.188085), (40.0, 35.957859), (40.0, 39.324867),
)
