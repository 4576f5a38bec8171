"""Domain types, synthetic video generation, the cost proxy and seeded RNG streams."""

from __future__ import annotations

import json
import os
import tempfile
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


class OCSError(Exception):
    """Base class for errors raised by this package."""

    code = "E_INTERNAL"


class ConfigError(OCSError, ValueError):
    code = "E_CONFIG"

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        self.message = message
        super().__init__(f"{field_name}: {message}")


class DomainError(OCSError, ValueError):
    code = "E_DOMAIN"


class NumericalDomainError(DomainError):
    code = "E_NUMERIC"


class DegenerateDistributionError(DomainError):
    code = "E_DEGENERATE"


class DivergenceError(OCSError, RuntimeError):
    code = "E_DIVERGENCE"

    def __init__(self, epoch: int, message: str = "non-finite value"):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}: {message}")


# ---------------------------------------------------------------------------
# RNG contract

def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def rng_stream(seed: int, purpose: str, *ids: int) -> np.random.Generator:
    """Independent generator keyed by ``(seed, purpose, *ids)``.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys, so
    the same key always replays the same draws and distinct keys are
    statistically independent.
    """
    key = (_purpose_key(purpose),) + tuple(int(i) for i in ids)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, purpose: str, *ids: int) -> int:
    """A 64-bit seed derived deterministically from ``(seed, purpose, *ids)``."""
    key = (_purpose_key(purpose),) + tuple(int(i) for i in ids)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


# ---------------------------------------------------------------------------
# Domain types

@dataclass(frozen=True)
class DatasetSpec:
    num_videos: int = 200
    T: int = 10
    C: int = 4
    D: int = 8
    salient_count_range: tuple[int, int] = (2, 2)
    signal_strength: float = 5.0
    noise_sigma: float = 0.1
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "salient_count_range", tuple(int(v) for v in self.salient_count_range))

    def validate(self) -> None:
        if self.num_videos < 0:
            raise ConfigError("num_videos", "must be >= 0")
        if self.T < 2:
            raise ConfigError("T", "must be >= 2")
        if self.C < 2:
            raise ConfigError("C", "must be >= 2")
        if self.D < 1:
            raise ConfigError("D", "must be >= 1")
        if len(self.salient_count_range) != 2:
            raise ConfigError("salient_count_range", "must be a (min, max) pair")
        lo, hi = self.salient_count_range
        if not 1 <= lo <= hi <= self.T:
            raise ConfigError("salient_count_range", f"need 1 <= min <= max <= T, got {lo}..{hi}")
        if not self.signal_strength >= 0:
            raise ConfigError("signal_strength", "must be nonnegative")
        if not self.noise_sigma >= 0:
            raise ConfigError("noise_sigma", "must be nonnegative")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed", "must fit in 64 bits")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["salient_count_range"] = list(self.salient_count_range)
        return d


@dataclass(frozen=True, eq=False)
class SyntheticVideo:
    id: int
    label: int
    frames: np.ndarray  # (T, D)
    salient_set: frozenset[int]
    gen_seed: int

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]

    def salient_sorted(self) -> list[int]:
        return sorted(self.salient_set)


@dataclass(frozen=True)
class CostModel:
    c_skim: float = 1.0
    c_classifier: float = 10.0

    def validate(self) -> None:
        if not self.c_skim > 0:
            raise ConfigError("c_skim", "must be > 0")
        if not self.c_classifier > 0:
            raise ConfigError("c_classifier", "must be > 0")


# ---------------------------------------------------------------------------
# Generation

def class_embedding(label: int, D: int, master_seed: int) -> np.ndarray:
    """Deterministic pseudo-random unit vector for ``label``."""
    v = rng_stream(master_seed, "class-embedding", label).standard_normal(D)
    return v / np.linalg.norm(v)


def regenerate_video(spec: DatasetSpec, video_id: int, gen_seed: int) -> SyntheticVideo:
    rng = np.random.Generator(np.random.PCG64(int(gen_seed)))
    label = int(rng.integers(0, spec.C))
    lo, hi = spec.salient_count_range
    count = int(rng.integers(lo, hi + 1))
    salient = rng.choice(spec.T, size=count, replace=False)
    frames = rng.normal(0.0, spec.noise_sigma, size=(spec.T, spec.D))
    frames[salient] += spec.signal_strength * class_embedding(label, spec.D, spec.master_seed)
    frames.setflags(write=False)
    return SyntheticVideo(
        id=int(video_id),
        label=label,
        frames=frames,
        salient_set=frozenset(int(s) for s in salient),
        gen_seed=int(gen_seed),
    )


def generate_dataset(spec: DatasetSpec) -> list[SyntheticVideo]:
    spec.validate()
    return [
        regenerate_video(spec, i, derive_seed(spec.master_seed, "video", i))
        for i in range(spec.num_videos)
    ]


def clip_cost(T: int, N: int, model: CostModel | None = None) -> float:
    model = model or CostModel()
    if N < 0 or N > T:
        raise DomainError(f"need 0 <= N <= T, got N={N}, T={T}")
    return T * model.c_skim + N * model.c_classifier


# ---------------------------------------------------------------------------
# Files

def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` through a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt_float(x: float) -> str:
    """Round-trip exact decimal for a float64."""
    return format(float(x), ".17g")


DATASET_MAGIC = "# OCS-DATA v1"


def dumps_dataset(
    videos: list[SyntheticVideo],
    spec: DatasetSpec,
    full_precision: bool = False,
    meta: dict | None = None,
) -> str:
    """Serialize videos as tab-separated lines.

    The compact form stores only ``id, label, T, D, salient, seed``; features
    are regenerated from the seed on load. ``full_precision`` appends a
    ``features:`` column with every value written at 17 significant digits.
    """
    lines = [DATASET_MAGIC, "# spec " + json.dumps(spec.to_dict(), sort_keys=True)]
    for k, v in sorted((meta or {}).items()):
        lines.append(f"# {k}={v}")
    for v in videos:
        cols = [
            str(v.id),
            str(v.label),
            str(v.T),
            str(v.D),
            "salient:" + ",".join(str(s) for s in v.salient_sorted()),
            str(v.gen_seed),
        ]
        if full_precision:
            cols.append("features:" + ",".join(fmt_float(x) for x in v.frames.ravel()))
        lines.append("\t".join(cols))
    return "\n".join(lines) + "\n"


def write_dataset(path, videos, spec, full_precision=False, meta=None) -> None:
    atomic_write_text(path, dumps_dataset(videos, spec, full_precision, meta))


@dataclass
class DatasetFile:
    spec: DatasetSpec
    videos: list[SyntheticVideo]
    meta: dict = field(default_factory=dict)


def loads_dataset(text: str) -> DatasetFile:
    lines = text.splitlines()
    if not lines or lines[0] != DATASET_MAGIC:
        raise ConfigError("dataset", "missing OCS-DATA v1 header")
    spec = None
    meta = {}
    videos = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        if line.startswith("# spec "):
            raw = json.loads(line[len("# spec "):])
            spec = DatasetSpec(**raw)
            continue
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
            continue
        if spec is None:
            raise ConfigError("dataset", "record before spec header")
        cols = line.split("\t")
        if len(cols) not in (6, 7) or not cols[4].startswith("salient:"):
            raise ConfigError("dataset", f"malformed record on line {lineno}")
        vid, label, T, D = (int(c) for c in cols[:4])
        salient = frozenset(int(s) for s in cols[4][len("salient:"):].split(",") if s)
        seed = int(cols[5])
        if len(cols) == 7:
            values = np.array([float(x) for x in cols[6][len("features:"):].split(",")])
            frames = values.reshape(T, D)
            frames.setflags(write=False)
            video = SyntheticVideo(vid, label, frames, salient, seed)
        else:
            video = regenerate_video(spec, vid, seed)
            if (video.label, video.salient_set, video.T, video.D) != (label, salient, T, D):
                raise ConfigError("dataset", f"record {vid} does not match its seed")
        videos.append(video)
    if spec is None:
        raise ConfigError("dataset", "missing spec header")
    return DatasetFile(spec, videos, meta)


def read_dataset(path) -> DatasetFile:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))
