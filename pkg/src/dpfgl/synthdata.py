"""Procedural real/fake image corpus with family-specific spectral artifacts.

"Real" images are blurred composites of soft ellipses over low-frequency
noise, so their energy sits at low spatial frequencies.  Each fake family
stamps a different frequency-domain fingerprint on an independent real base:

=============  ==================================================  =======================
family         artifact                                            spectral signature
=============  ==================================================  =======================
checker_grid   additive ``cos(2πx/p)·cos(2πy/p)`` lattice          peaks at (±n/p, ±n/p)
band_stop      annulus of frequencies attenuated                   mid-band hole
blend_seam     rectangle pasted from another image, hard seam      axis-aligned streaks
ring_noise     noise with energy on a thin frequency annulus       bright ring
=============  ==================================================  =======================

All images are quantized to 8 bits (k/255) at generation time so that a
corpus reloaded from PGM files is bit-identical to the in-memory one.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rng import make_rng

REAL_ID = "real"
FAMILIES = ("checker_grid", "band_stop", "blend_seam", "ring_noise")
SPLITS = ("train", "support", "query", "test")
LABEL_REAL, LABEL_FAKE = 0, 1


@dataclass(frozen=True)
class TechniqueSpec:
    id: str
    family: str
    params: dict = field(default_factory=dict, hash=False, compare=True)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown artifact family {self.family!r}")
        if self.id == REAL_ID:
            raise ValueError(f"technique id {REAL_ID!r} is reserved")
        for k, v in self.params.items():
            if k not in DEFAULT_PARAMS[self.family]:
                raise ValueError(f"{self.family}: unknown parameter {k!r}")
            lo, hi = PARAM_RANGES[self.family][k]
            if not lo <= v <= hi:
                raise ValueError(f"{self.family}.{k}={v} outside [{lo}, {hi}]")

    def resolved(self) -> dict:
        return {**DEFAULT_PARAMS[self.family], **self.params}


DEFAULT_PARAMS = {
    "checker_grid": {"period": 8, "amplitude": 0.08},
    "band_stop": {"r_low": 3.0, "r_high": 11.0, "amplitude": 1.0},
    "blend_seam": {"seam_width": 1.0, "amplitude": 1.0, "offset": 0.16},
    "ring_noise": {"radius": 12.0, "width": 1.5, "amplitude": 0.05},
}
PARAM_RANGES = {
    "checker_grid": {"period": (2, 16), "amplitude": (0.0, 0.5)},
    "band_stop": {"r_low": (0.0, 32.0), "r_high": (0.0, 32.0), "amplitude": (0.0, 1.0)},
    "blend_seam": {"seam_width": (0.0, 8.0), "amplitude": (0.0, 1.0), "offset": (0.0, 0.5)},
    "ring_noise": {"radius": (1.0, 32.0), "width": (0.5, 8.0), "amplitude": (0.0, 0.5)},
}


def default_techniques() -> list[TechniqueSpec]:
    return [TechniqueSpec(id=f, family=f) for f in FAMILIES]


@dataclass
class SampleRecord:
    image: np.ndarray  # (1, H, W) float64 in [0, 1]
    label: int
    technique: str
    split: str
    index: int = 0

    @property
    def path(self) -> str:
        return f"images/{self.split}/{self.technique}/{self.index:05d}.pgm"


# ---------------------------------------------------------------- helpers
def _freq_radius(n: int) -> np.ndarray:
    f = np.fft.fftfreq(n) * n
    return np.sqrt(f[:, None] ** 2 + f[None, :] ** 2)


# Reals keep almost all of their (non-DC) energy below this radius; the mean
# fraction at or above it over many seeds stays under REAL_HF_MAX_FRACTION
# (measured about 3e-4 on 100 seeds).
REAL_HF_RADIUS = 8.0
REAL_HF_MAX_FRACTION = 5e-3


def high_frequency_fraction(image: np.ndarray, radius: float = REAL_HF_RADIUS) -> float:
    """Share of non-DC spectral energy at frequency radius >= ``radius``."""
    img = np.asarray(image, dtype=np.float64).reshape(np.shape(image)[-2:])
    power = np.abs(np.fft.fft2(img - img.mean())) ** 2
    total = power.sum()
    return float(power[_freq_radius(img.shape[-1]) >= radius].sum() / total) if total > 0 else 0.0


def _lowpass(img: np.ndarray, sigma_bins: float) -> np.ndarray:
    r = _freq_radius(img.shape[-1])
    return np.fft.ifft2(np.fft.fft2(img) * np.exp(-0.5 * (r / sigma_bins) ** 2)).real


def quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


# ---------------------------------------------------------------- generators
def generate_real(rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """Soft ellipses over low-frequency noise, blurred, clipped to [0, 1]. Shape (H, W)."""
    noise = _lowpass(rng.normal(size=(size, size)), sigma_bins=2.5)
    noise *= 0.08 / (noise.std() + 1e-12)
    img = rng.uniform(0.35, 0.65) + noise
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0.15, 0.85, size=2) * size
        ay, ax = rng.uniform(0.12, 0.35, size=2) * size
        theta = rng.uniform(0, np.pi)
        c, s = np.cos(theta), np.sin(theta)
        u = (c * (xx - cx) + s * (yy - cy)) / ax
        v = (-s * (xx - cx) + c * (yy - cy)) / ay
        r = np.sqrt(u * u + v * v)
        soft = rng.uniform(0.1, 0.25)
        img += rng.uniform(-0.25, 0.25) / (1.0 + np.exp(-(1.0 - r) / soft))
    img = _lowpass(img, sigma_bins=6.0)
    return np.clip(img, 0.0, 1.0)


def generate_fake(rng: np.random.Generator, base: np.ndarray, spec: TechniqueSpec) -> np.ndarray:
    """Apply ``spec``'s artifact to ``base`` (H, W); result clipped to [0, 1]."""
    p = spec.resolved()
    n = base.shape[-1]
    amp = float(p["amplitude"])
    if amp == 0:
        return base.copy()
    if spec.family == "checker_grid":
        yy, xx = np.mgrid[0:n, 0:n]
        phase = rng.uniform(0, 2 * np.pi, size=2)
        period = float(p["period"])
        grid = np.cos(2 * np.pi * xx / period + phase[0]) * np.cos(2 * np.pi * yy / period + phase[1])
        out = base + amp * grid
    elif spec.family == "band_stop":
        r = _freq_radius(n)
        band = (r >= p["r_low"]) & (r <= p["r_high"])
        out = np.fft.ifft2(np.fft.fft2(base) * np.where(band, 1.0 - amp, 1.0)).real
    elif spec.family == "blend_seam":
        donor = generate_real(rng, n)
        donor = donor + rng.choice([-1.0, 1.0]) * float(p["offset"]) * rng.uniform(0.75, 1.25)
        h, w = rng.integers(n // 3, n // 2 + 4, size=2)
        top, left = rng.integers(2, n - h - 1), rng.integers(2, n - w - 1)
        yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
        # signed distance to the rectangle edge, positive inside
        d = np.minimum.reduce([yy - top, top + h - 1 - yy, xx - left, left + w - 1 - xx])
        width = max(float(p["seam_width"]), 1e-6)
        alpha = np.clip((d + 1.0) / width, 0.0, 1.0) * amp
        out = (1 - alpha) * base + alpha * donor
    elif spec.family == "ring_noise":
        r = _freq_radius(n)
        ring = np.abs(r - p["radius"]) <= p["width"] / 2
        spec_noise = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) * ring
        noise = np.fft.ifft2(spec_noise).real
        noise *= amp / (noise.std() + 1e-12)
        out = base + noise
    else:  # pragma: no cover - guarded by TechniqueSpec
        raise ValueError(spec.family)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------- corpus
@dataclass
class CorpusConfig:
    techniques: list = field(default_factory=default_techniques)
    known: tuple = ("checker_grid", "blend_seam", "ring_noise")
    unknown: tuple = ("band_stop",)
    image_size: int = 32
    seed: int = 0
    train_per_class: int = 400
    test_per_class: int = 100
    support_per_class: int = 20
    query_per_class: int = 50

    def validate(self) -> None:
        ids = [t.id for t in self.techniques]
        if len(set(ids)) != len(ids):
            raise ValueError("technique ids must be unique")
        if set(self.known) & set(self.unknown):
            raise ValueError("known and unknown technique lists overlap")
        missing = (set(self.known) | set(self.unknown)) - set(ids)
        if missing:
            raise ValueError(f"techniques not defined: {sorted(missing)}")
        for name in ("train_per_class", "test_per_class", "support_per_class", "query_per_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        n = self.image_size
        if n & (n - 1):
            raise ValueError("image_size must be a power of two")

    def count(self, split: str) -> int:
        return getattr(self, f"{split}_per_class")

    def technique(self, tid: str) -> TechniqueSpec:
        for t in self.techniques:
            if t.id == tid:
                return t
        raise KeyError(tid)


def make_real_sample(cfg: CorpusConfig, split: str, index: int) -> SampleRecord:
    img = generate_real(make_rng(cfg.seed, split, REAL_ID, index), cfg.image_size)
    return SampleRecord(quantize(img)[None], LABEL_REAL, REAL_ID, split, index)


def make_fake_sample(cfg: CorpusConfig, spec: TechniqueSpec, split: str, index: int) -> SampleRecord:
    rng = make_rng(cfg.seed, split, spec.id, index)
    base = generate_real(rng, cfg.image_size)
    img = generate_fake(rng, base, spec)
    return SampleRecord(quantize(img)[None], LABEL_FAKE, spec.id, split, index)


def generate_samples(cfg: CorpusConfig) -> list[SampleRecord]:
    """Every sample of the corpus, in manifest order.

    Each split holds ``count * len(techniques)`` reals and ``count`` fakes per
    technique, so any technique subset can be class-balanced by taking a
    prefix of the reals.
    """
    cfg.validate()
    out = []
    for split in SPLITS:
        n = cfg.count(split)
        out.extend(make_real_sample(cfg, split, i) for i in range(n * len(cfg.techniques)))
        for spec in cfg.techniques:
            out.extend(make_fake_sample(cfg, spec, split, i) for i in range(n))
    return out


# ---------------------------------------------------------------- PGM / manifest I/O
def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.float64).reshape(image.shape[-2:])
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pixels = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    return pixels.reshape(h, w).astype(np.float64) / 255.0


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_manifest(path, records: Iterable[SampleRecord]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path", "label", "technique", "split"])
    for r in records:
        writer.writerow([r.path, "fake" if r.label else "real", r.technique, r.split])
    _atomic_write(Path(path), buf.getvalue().encode("utf-8"))


def generate_corpus(cfg: CorpusConfig, out_dir) -> list[SampleRecord]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"cannot write to {out}")
    records = generate_samples(cfg)
    for r in records:
        target = out / r.path
        target.parent.mkdir(parents=True, exist_ok=True)
        write_pgm(target, r.image)
    write_manifest(out / "manifest.csv", records)
    return records


def load_corpus(corpus_dir) -> list[SampleRecord]:
    root = Path(corpus_dir)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv in {root}")
    records = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["path", "label", "technique", "split"]:
            raise ValueError(f"unexpected manifest header {reader.fieldnames}")
        for row in reader:
            label = {"real": LABEL_REAL, "fake": LABEL_FAKE}[row["label"]]
            if (label == LABEL_FAKE) == (row["technique"] == REAL_ID):
                raise ValueError(f"label/technique inconsistent in row {row}")
            index = int(Path(row["path"]).stem)
            img = read_pgm(root / row["path"])[None]
            records.append(SampleRecord(img, label, row["technique"], row["split"], index))
    return records


# ---------------------------------------------------------------- datasets
@dataclass
class ArrayDataset:
    images: np.ndarray  # (N, 1, H, W)
    labels: np.ndarray  # (N,) int
    techniques: np.ndarray  # (N,) str
    ids: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "ArrayDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return ArrayDataset(self.images[idx], self.labels[idx], self.techniques[idx], [self.ids[i] for i in idx])

    def concat(self, other: "ArrayDataset") -> "ArrayDataset":
        return ArrayDataset(
            np.concatenate([self.images, other.images]),
            np.concatenate([self.labels, other.labels]),
            np.concatenate([self.techniques, other.techniques]),
            self.ids + other.ids,
        )


def select(records: Sequence[SampleRecord], split: str, techniques: Sequence[str],
           per_class: int | None = None, balance: bool = True) -> ArrayDataset:
    """Fakes of ``techniques`` in ``split`` plus a matching prefix of the reals.

    With ``per_class`` set, at most that many fakes per technique are used.
    With ``balance`` the real count equals the fake count.
    """
    fakes, reals = [], []
    for r in records:
        if r.split != split:
            continue
        if r.technique == REAL_ID:
            reals.append(r)
        elif r.technique in techniques and (per_class is None or r.index < per_class):
            fakes.append(r)
    reals.sort(key=lambda r: r.index)
    if balance:
        if len(reals) < len(fakes):
            raise ValueError(f"split {split!r}: only {len(reals)} reals for {len(fakes)} fakes")
        reals = reals[:len(fakes)]
    chosen = reals + fakes
    if not chosen:
        raise ValueError(f"no samples for split={split!r} techniques={list(techniques)}")
    return ArrayDataset(
        np.stack([r.image for r in chosen]),
        np.array([r.label for r in chosen], dtype=np.int64),
        np.array([r.technique for r in chosen]),
        [r.path for r in chosen],
    )


# ---------------------------------------------------------------- spectrum analysis
@dataclass
class SpectrumSummary:
    grid: np.ndarray  # (H, W) mean log(1+|F|), origin at centre
    radial: np.ndarray  # (H//2,) mean over each integer-radius ring
    counts: np.ndarray  # pixels per ring


def log_spectrum(images: np.ndarray) -> np.ndarray:
    """Per-image log(1+|FFT|), origin-centred. Input (N, H, W) or (N, 1, H, W)."""
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.ndim == 4:
        imgs = imgs[:, 0]
    return np.fft.fftshift(np.log1p(np.abs(np.fft.fft2(imgs))), axes=(-2, -1))


def radial_profile(grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h, w = grid.shape
    yy, xx = np.mgrid[0:h, 0:w]
    r = np.floor(np.sqrt((yy - h // 2) ** 2 + (xx - w // 2) ** 2)).astype(np.int64)
    nbins = h // 2
    inside = r < nbins
    counts = np.bincount(r[inside], minlength=nbins)
    sums = np.bincount(r[inside], weights=grid[inside], minlength=nbins)
    return sums / np.maximum(counts, 1), counts


def average_spectrum(images) -> SpectrumSummary:
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.ndim == 2:
        imgs = imgs[None]
    if imgs.size == 0 or len(imgs) == 0:
        raise ValueError("average_spectrum needs at least one image")
    grid = log_spectrum(imgs).mean(axis=0)
    radial, counts = radial_profile(grid)
    return SpectrumSummary(grid, radial, counts)


def stack_images(images: Sequence[np.ndarray]) -> np.ndarray:
    shapes = {np.shape(im)[-2:] for im in images}
    if len(shapes) != 1:
        raise ValueError(f"images have differing sizes: {sorted(shapes)}")
    return np.stack([np.asarray(im, dtype=np.float64).reshape(next(iter(shapes))) for im in images])


def write_spectrum(summary: SpectrumSummary, out_prefix) -> tuple[Path, Path]:
    """``<prefix>.pgm`` (min-max scaled grid) and ``<prefix>.csv`` (radial profile)."""
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    g = summary.grid
    span = g.max() - g.min()
    scaled = (g - g.min()) / span if span > 0 else np.zeros_like(g)
    pgm = prefix.with_suffix(".pgm")
    write_pgm(pgm, scaled)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["radius", "mean_log_magnitude", "pixels"])
    for i, (v, c) in enumerate(zip(summary.radial, summary.counts)):
        writer.writerow([i, repr(float(v)), int(c)])
    csv_path = prefix.with_suffix(".csv")
    _atomic_write(csv_path, buf.getvalue().encode("utf-8"))
    return pgm, csv_path


def spectrum_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def separability(family_images: dict[str, np.ndarray], n_boot: int = 20, seed: int = 0) -> dict:
    """Between-family vs within-family distances of mean log spectra.

    Within-family spread is the largest distance between the means of two
    bootstrap resamples of the same family.
    """
    rng = make_rng(seed, "separability")
    logs = {k: log_spectrum(v) for k, v in family_images.items()}
    means = {k: v.mean(axis=0) for k, v in logs.items()}
    names = sorted(means)
    between = {
        (a, b): spectrum_distance(means[a], means[b]) for i, a in enumerate(names) for b in names[i + 1:]
    }
    within = {}
    for k in names:
        n = len(logs[k])
        worst = 0.0
        for _ in range(n_boot):
            m1 = logs[k][rng.integers(0, n, n)].mean(axis=0)
            m2 = logs[k][rng.integers(0, n, n)].mean(axis=0)
            worst = max(worst, spectrum_distance(m1, m2))
        within[k] = worst
    min_between = min(between.values())
    max_within = max(within.values())
    return {
        "between": between,
        "within": within,
        "min_between": min_between,
        "max_within": max_within,
        "ratio": min_between / max_within if max_within > 0 else float("inf"),
    }
