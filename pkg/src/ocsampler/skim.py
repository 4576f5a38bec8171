"""Cheap per-frame context features computed over all candidate frames."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ConfigError, SyntheticVideo

EXTRACTOR_KINDS = ("identity", "temporal_smooth")


@dataclass(frozen=True)
class FeatureExtractorSpec:
    kind: str = "identity"
    smooth_radius: int = 0

    def validate(self, T: int | None = None) -> None:
        if self.kind not in EXTRACTOR_KINDS:
            raise ConfigError("kind", f"unknown extractor {self.kind!r}")
        if self.smooth_radius < 0:
            raise ConfigError("smooth_radius", "must be >= 0")
        if T is not None and self.smooth_radius >= T:
            raise ConfigError("smooth_radius", f"must be < T={T}")


@dataclass(frozen=True, eq=False)
class SkimFeatures:
    z: np.ndarray  # (T, D_s)
    source_video_id: int

    @property
    def T(self) -> int:
        return self.z.shape[0]


def extract(video: SyntheticVideo, spec: FeatureExtractorSpec | None = None) -> SkimFeatures:
    spec = spec or FeatureExtractorSpec()
    spec.validate(video.T)
    frames = np.asarray(video.frames, dtype=np.float64)
    if spec.kind == "identity" or spec.smooth_radius == 0:
        z = frames.copy()
    else:
        r = spec.smooth_radius
        T = frames.shape[0]
        z = np.empty_like(frames)
        for t in range(T):
            z[t] = frames[max(0, t - r):min(T, t + r + 1)].mean(axis=0)
    z.setflags(write=False)
    return SkimFeatures(z=z, source_video_id=video.id)
