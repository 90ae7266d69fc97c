"""Per-frame 2-D DCT features: transform, low-frequency selection, deltas,
modality concatenation, mean-variance normalization and the on-disk feature
file format.

The transform is the orthonormal type-II DCT

    D_ij = a_i a_j sum_m sum_n A_mn cos(pi (2m+1) i / 2N) cos(pi (2n+1) j / 2N)

with a_0 = 1/sqrt(N) and a_i = sqrt(2/N) otherwise, computed as a pair of
matrix products against the cosine basis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import resize_bicubic

MVN_EPS = 1e-8

FEATURE_MAGIC = b"SSRF"


@dataclass
class DctConfig:
    resize_to: int = 64           # frames are resized to resize_to x resize_to
    k_per_modality: int = 30      # low-frequency coefficients kept per modality
    delta_window: int = 2         # regression half-window for delta features
    zigzag: bool = True           # diagonal ordering; False takes a square block

    def __post_init__(self):
        if self.k_per_modality > self.resize_to**2:
            raise ValueError("k_per_modality exceeds the number of coefficients")
        if self.delta_window < 1:
            raise ValueError("delta_window must be >= 1")


@dataclass
class FeatureSequence:
    """A T x D matrix of per-frame feature vectors for one utterance."""

    utterance_id: str
    frames: np.ndarray
    provenance: str = "dct"       # "dct" or "dae"
    normalized: bool = False

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("frames must be a nonempty T x D matrix")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def _dct_basis(n: int) -> np.ndarray:
    """Orthonormal cosine basis C with C[i, m] = a_i cos(pi (2m+1) i / 2N)."""
    i = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * m + 1) * i / (2 * n))
    scale = np.full(n, np.sqrt(2.0 / n))
    scale[0] = 1.0 / np.sqrt(n)
    return scale[:, None] * c


_BASIS_CACHE: dict[int, np.ndarray] = {}


def _basis(n: int) -> np.ndarray:
    if n not in _BASIS_CACHE:
        _BASIS_CACHE[n] = _dct_basis(n)
    return _BASIS_CACHE[n]


def dct2(image: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DCT of a square image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"dct2 needs a square image, got {image.shape}")
    c = _basis(image.shape[0])
    return c @ image @ c.T


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`dct2`."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[0] != coeffs.shape[1]:
        raise ValueError(f"idct2 needs a square grid, got {coeffs.shape}")
    c = _basis(coeffs.shape[0])
    return c.T @ coeffs @ c


def zigzag_order(n: int) -> list[tuple[int, int]]:
    """All (i, j) index pairs sorted by increasing i+j, ties by increasing i."""
    return sorted(((i, j) for i in range(n) for j in range(n)), key=lambda p: (p[0] + p[1], p[0]))


def select_low_freq(coeffs: np.ndarray, k: int, zigzag: bool = True) -> np.ndarray:
    """Keep the k lowest-frequency coefficients as a flat vector.

    With ``zigzag`` the coefficients are taken along increasing diagonal
    index i+j (ties by row index); otherwise the top-left ceil(sqrt(k))
    square block is flattened row-major and truncated to k entries.
    """
    n = coeffs.shape[0]
    if not 1 <= k <= n * n:
        raise ValueError(f"k={k} out of range for {n}x{n} coefficients")
    if zigzag:
        order = zigzag_order(n)[:k]
        return np.array([coeffs[i, j] for i, j in order])
    side = int(np.ceil(np.sqrt(k)))
    return coeffs[:side, :side].ravel()[:k].copy()


def reconstruct_truncated(selected: np.ndarray, cfg: DctConfig) -> np.ndarray:
    """Rebuild an image from k kept coefficients, zeroing the discarded ones."""
    n = cfg.resize_to
    k = len(selected)
    if not 1 <= k <= n * n:
        raise ValueError(f"selected vector of length {k} inconsistent with N={n}")
    full = np.zeros((n, n))
    if cfg.zigzag:
        for value, (i, j) in zip(selected, zigzag_order(n)[:k]):
            full[i, j] = value
    else:
        side = int(np.ceil(np.sqrt(k)))
        block = np.zeros(side * side)
        block[:k] = selected
        full[:side, :side] = block.reshape(side, side)
    return np.clip(idct2(full), 0.0, 1.0)


def dct_frame_features(image: np.ndarray, cfg: DctConfig) -> np.ndarray:
    """Resize one frame and return its k low-frequency DCT coefficients."""
    resized = resize_bicubic(image, cfg.resize_to, cfg.resize_to)
    return select_low_freq(dct2(resized), cfg.k_per_modality, cfg.zigzag)


def delta(features: np.ndarray, window: int = 2) -> np.ndarray:
    """First-derivative regression deltas with replicated edge frames.

    delta_t = sum_{w=1..W} w (x_{t+w} - x_{t-w}) / (2 sum_{w=1..W} w^2)
    """
    features = np.asarray(features, dtype=np.float64)
    t = features.shape[0]
    denom = 2.0 * sum(w * w for w in range(1, window + 1))
    out = np.zeros_like(features)
    for w in range(1, window + 1):
        ahead = features[np.minimum(np.arange(t) + w, t - 1)]
        behind = features[np.maximum(np.arange(t) - w, 0)]
        out += w * (ahead - behind)
    return out / denom


def assemble_frame_features(
    tongue: FeatureSequence,
    lip: FeatureSequence,
    with_delta: bool = True,
    delta_window: int = 2,
) -> FeatureSequence:
    """Concatenate per-frame tongue and lip vectors, optionally appending deltas.

    With K coefficients per modality the static vector has 2K components and
    the delta-augmented vector 4K (the 120-component layout for K = 30).
    """
    if tongue.num_frames != lip.num_frames:
        raise ValueError(
            f"length mismatch: tongue T={tongue.num_frames}, lip T={lip.num_frames}"
        )
    static = np.hstack([tongue.frames, lip.frames])
    if with_delta:
        static = np.hstack([static, delta(static, delta_window)])
    return FeatureSequence(tongue.utterance_id, static, provenance=tongue.provenance)


@dataclass
class MvnStats:
    """Per-dimension mean and population variance of a training feature set."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "var": self.var.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MvnStats":
        return cls(np.array(d["mean"]), np.array(d["var"]))


def compute_mvn_stats(sequences) -> MvnStats:
    """Global mean/variance over all frames of the given (training) sequences."""
    frames = np.vstack([s.frames for s in sequences])
    return MvnStats(frames.mean(axis=0), frames.var(axis=0))


def mvn(features: FeatureSequence, stats: MvnStats | None = None) -> FeatureSequence:
    """Standardize each dimension to zero mean, unit variance.

    When ``stats`` is omitted they are computed from the given frames; for
    corpus use they must come from the training set so the test transform
    reuses the training coefficients.
    """
    if stats is None:
        stats = compute_mvn_stats([features])
    if stats.dim != features.dim:
        raise ValueError(f"stats dim {stats.dim} != feature dim {features.dim}")
    scaled = (features.frames - stats.mean) / np.sqrt(stats.var + MVN_EPS)
    return FeatureSequence(
        features.utterance_id, scaled, provenance=features.provenance, normalized=True
    )


def write_features(path, seq: FeatureSequence) -> None:
    """Write one utterance to the binary feature format.

    Layout: magic "SSRF", little-endian u32 T, u32 D, then T*D float32
    values row-major.
    """
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    t, d = frames.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", t, d))
        fh.write(frames.tobytes())


def read_features(path, provenance: str = "dct", normalized: bool = False) -> FeatureSequence:
    """Read a feature file written by :func:`write_features`."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a feature file (bad magic)")
    t, d = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * t * d
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    frames = np.frombuffer(raw, dtype="<f4", offset=12).reshape(t, d).astype(np.float64)
    return FeatureSequence(path.stem, frames, provenance=provenance, normalized=normalized)
