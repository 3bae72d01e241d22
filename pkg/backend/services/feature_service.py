"""
Deformation feature service.
Computes modal deformation features from surface samplings and resamples
polyline measurements by arc length.
"""

import logging
from typing import Optional, Sequence, Union

import numpy as np

from models.features import FeatureVector, SamplingSet
from models.mapping import FeatureProjector
from services.exceptions import DegenerateInputError, InvalidInputError, NumericError

logger = logging.getLogger(__name__)


def _arclength(points: np.ndarray):
    segments = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return segments, np.concatenate([[0.0], np.cumsum(segments)])


def resample_polyline(points, l: int, closed: bool = False) -> np.ndarray:
    """l points at equal arc-length spacing, stacked as a 3l vector.

    Open polylines keep both endpoints; closed ones start at the first vertex
    and space l points around the full perimeter.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if points.shape[0] < 2:
        raise InvalidInputError(f"A polyline needs at least 2 points, got {points.shape[0]}")
    if l < 2:
        raise InvalidInputError(f"Resampling needs at least 2 samples, got {l}")
    if closed:
        points = np.vstack([points, points[:1]])

    segments, cumulative = _arclength(points)
    keep = np.concatenate([[True], segments > 0.0])
    points, cumulative = points[keep], cumulative[keep]
    total = cumulative[-1]
    if total <= 0.0:
        raise DegenerateInputError("Polyline has zero total length")

    targets = total * np.arange(l) / l if closed else np.linspace(0.0, total, l)
    samples = np.column_stack([np.interp(targets, cumulative, points[:, axis]) for axis in range(3)])
    return samples.reshape(-1)


def sample_at_levels(polyline, levels: Sequence[float], axis: int = 1) -> np.ndarray:
    """First crossing of an open polyline with each coordinate level along ``axis``.

    Levels outside the polyline's range snap to the nearer endpoint.
    """
    points = np.asarray(polyline, dtype=float).reshape(-1, 3)
    if points.shape[0] < 2:
        raise InvalidInputError(f"A polyline needs at least 2 points, got {points.shape[0]}")
    coord = points[:, axis]
    start, end = coord[:-1], coord[1:]
    out = np.empty((len(levels), 3))
    for i, level in enumerate(levels):
        crossing = np.flatnonzero((np.minimum(start, end) <= level) & (level <= np.maximum(start, end)))
        if crossing.size == 0:
            out[i] = points[np.argmin(np.abs(coord - level))]
            continue
        s = int(crossing[0])
        span = end[s] - start[s]
        frac = 0.0 if span == 0.0 else (level - start[s]) / span
        out[i] = points[s] + frac * (points[s + 1] - points[s])
    return out.reshape(-1)


def compute_features(proj: FeatureProjector, samples: Union[SamplingSet, np.ndarray]) -> FeatureVector:
    """s = D_Phi D_N (x(p_s, t) - x(eta(p_s))), all in the base-mesh frame."""
    if isinstance(samples, SamplingSet):
        if samples.ids is not None and proj.sample_ids is not None:
            if not np.array_equal(samples.ids, proj.sample_ids):
                raise InvalidInputError("Sampling ids do not match the feature projector")
        positions = samples.positions
    else:
        positions = np.asarray(samples, dtype=float).reshape(-1)
    if positions.size != proj.rest_eta.size:
        raise InvalidInputError(
            f"Got {positions.size} sample coordinates, projector expects {proj.rest_eta.size}"
        )
    values = proj.d_phi @ (proj.d_n @ (positions - proj.rest_eta))
    if not np.all(np.isfinite(values)):
        raise NumericError("Non-finite deformation features", diagnostics={"n_samples": proj.n_samples})
    return FeatureVector(values=values)


def feature_error(s: FeatureVector, s_star: FeatureVector) -> FeatureVector:
    """e_s = s - s*."""
    if s.m != s_star.m:
        raise InvalidInputError(f"Feature dimensions differ: {s.m} vs {s_star.m}")
    return FeatureVector(values=s.values - s_star.values)


class MeasurementNoise:
    """Seeded Gaussian perturbation of stacked sample positions; zero std is a no-op."""

    def __init__(self, std: float = 0.0, seed: Optional[int] = None):
        if std < 0:
            raise InvalidInputError(f"Noise std must be non-negative, got {std}")
        self.std = std
        self.rng = np.random.default_rng(seed)

    def apply(self, positions: np.ndarray) -> np.ndarray:
        if self.std == 0.0:
            return positions
        return positions + self.rng.normal(0.0, self.std, size=positions.shape)
