"""Chips, band ratios, the synthetic multi-spectral generator, splits and augmentation."""
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

BANDS = ("B11", "B10", "B7", "B6", "B76")
BAND_CODES = {b: i for i, b in enumerate(BANDS)}
CEMENT, LANDCOVER = 0, 1
CLASS_NAMES = ("cement", "landcover")
DEFAULT_CLASS_WEIGHTS = (3.0, 1.0)
RATIO_EPS = 1e-6

CHIP_MAGIC = b"FCHP"
CHIP_VERSION = 1
_CHIP_HEADER = struct.Struct("<4sBIIIBB")

# Surface reflectance levels of the synthetic SWIR bands.
_RHO = {"B7": 0.25, "B6": 0.30}
# Seasonal offsets per channel (January 2018, April 2017, January 2017).
_SEASON = np.array([0.0, 0.6, -0.2])

PRESETS = {
    "separable": dict(tir_amp=6.0, swir_gain=1.0, distractor_rate=0.0, distractor_amp=0.0),
    "hard": dict(tir_amp=0.6, swir_gain=0.1, distractor_rate=0.5, distractor_amp=1.0),
}


class DataError(ValueError):
    pass


@dataclass
class Chip:
    pixels: np.ndarray
    label: int
    band_id: str
    source: str = ""
    mask: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3 or self.pixels.shape[1] != self.pixels.shape[2]:
            raise DataError(f"chip must be C x H x W with H == W, got {self.pixels.shape}")
        if self.band_id not in BAND_CODES:
            raise DataError(f"unknown band {self.band_id!r}")
        if self.label not in (CEMENT, LANDCOVER):
            raise DataError(f"label must be 0 (cement) or 1 (landcover), got {self.label}")
        if not np.all(np.isfinite(self.pixels)):
            raise DataError("chip pixels must be finite")

    def to_bytes(self):
        c, h, w = self.pixels.shape
        head = _CHIP_HEADER.pack(CHIP_MAGIC, CHIP_VERSION, c, h, w, self.label, BAND_CODES[self.band_id])
        return head + self.pixels.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, buf, source=""):
        if len(buf) < _CHIP_HEADER.size:
            raise DataError("truncated chip header")
        magic, version, c, h, w, label, band = _CHIP_HEADER.unpack_from(buf)
        if magic != CHIP_MAGIC or version != CHIP_VERSION:
            raise DataError(f"not a version-{CHIP_VERSION} chip file: {magic!r} v{version}")
        n = c * h * w
        body = buf[_CHIP_HEADER.size:]
        if len(body) != 4 * n:
            raise DataError(f"chip body has {len(body)} bytes, expected {4 * n}")
        pixels = np.frombuffer(body, dtype="<f4").reshape(c, h, w).astype(np.float32)
        return cls(pixels, label, BANDS[band], source)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), source=str(path))


def band_ratio(b7, b6, eps=RATIO_EPS):
    """Pixelwise ``b7 / (b6 + eps)`` as a B76 chip."""
    if b7.pixels.shape != b6.pixels.shape:
        raise DataError(f"band ratio needs aligned chips, got {b7.pixels.shape} and {b6.pixels.shape}")
    ratio = b7.pixels.astype(np.float64) / (b6.pixels.astype(np.float64) + eps)
    return Chip(ratio, b7.label, "B76", b7.source, b7.mask)


# ----------------------------------------------------------------------
# synthetic generator

def _smooth_field(rng, h, scale):
    f = gaussian_filter(rng.standard_normal((h, h)), sigma=scale, mode="wrap")
    return (f - f.mean()) / f.std()


def _disk(h, cy, cx, r):
    yy, xx = np.mgrid[0:h, 0:h]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def anomaly_radius(h):
    return max(2, int(round(0.12 * h)))


def _bar(rng, h):
    """Oriented straight streak (road- or river-like) of about the anomaly's area, in every date."""
    r = anomaly_radius(h)
    cy, cx = rng.uniform(r, h - r, size=2)
    angle = rng.uniform(0.0, np.pi)
    yy, xx = np.mgrid[0:h, 0:h]
    along = (xx - cx) * np.cos(angle) + (yy - cy) * np.sin(angle)
    across = -(xx - cx) * np.sin(angle) + (yy - cy) * np.cos(angle)
    return (np.abs(along) <= 2 * r) & (np.abs(across) <= 1.0)


def _site_layout(seed, site, h):
    """Anomaly placement and landscape shared by every band of one site."""
    rng = np.random.default_rng([seed, site, 0])
    r = anomaly_radius(h)
    cy, cx = rng.integers(r, h - r, size=2)
    scale = max(1.0, h / 16)
    shared = _smooth_field(rng, h, scale)
    return _disk(h, cy, cx, r), shared, scale


def _tir(rng, label, mask, shared, scale, preset, gain):
    h = mask.shape[0]
    px = np.empty((3, h, h))
    for c in range(3):
        f = 0.8 * shared + 0.6 * _smooth_field(rng, h, scale)
        px[c] = f + _SEASON[c]
    if label == CEMENT:
        px += gain * preset["tir_amp"] * mask
    if rng.random() < preset["distractor_rate"]:
        px += gain * preset["tir_amp"] * preset["distractor_amp"] * _bar(rng, h)
    return px


def _swir(rng, band, label, mask, shared, scale, preset):
    h = mask.shape[0]
    gain = {"B7": 0.8, "B6": 0.3}[band] * preset["swir_gain"]
    px = np.empty((3, h, h))
    for c in range(3):
        f = 0.9 * shared + 0.44 * _smooth_field(rng, h, scale)
        px[c] = _RHO[band] * (1.0 + 0.05 * f + 0.02 * _SEASON[c])
    if label == CEMENT:
        px *= 1.0 + gain * mask
    if rng.random() < preset["distractor_rate"]:
        px *= 1.0 + gain * preset["distractor_amp"] * _bar(rng, h)
    return px


def synth_site(seed, site, label, bands=BANDS, h=32, preset="separable"):
    """All requested band chips of one synthetic site, keyed by band id."""
    p = PRESETS[preset]
    mask, shared, scale = _site_layout(seed, site, h)
    src = f"synthetic:{preset}:seed={seed}:site={site}"
    out = {}
    cache = {}

    def swir(band):
        if band not in cache:
            rng = np.random.default_rng([seed, site, 1 + BAND_CODES[band]])
            cache[band] = Chip(_swir(rng, band, label, mask, shared, scale, p), label, band, src, mask)
        return cache[band]

    for band in bands:
        if band in ("B11", "B10"):
            rng = np.random.default_rng([seed, site, 1 + BAND_CODES[band]])
            gain = 1.0 if band == "B10" else 0.9
            out[band] = Chip(_tir(rng, label, mask, shared, scale, p, gain), label, band, src, mask)
        elif band in ("B7", "B6"):
            out[band] = swir(band)
        else:
            out[band] = band_ratio(swir("B7"), swir("B6"))
    return out


def site_labels(n_cement, n_landcover, seed):
    if n_cement < 1 or n_landcover < 1:
        raise DataError("need at least one chip per class")
    labels = np.array([CEMENT] * n_cement + [LANDCOVER] * n_landcover)
    return labels[np.random.default_rng([seed, 2**20]).permutation(len(labels))]


@dataclass
class SpectralDataset:
    """In-memory chips: ``images[band]`` is ``N x 3 x H x W`` float32, one row per site."""

    images: dict
    labels: np.ndarray
    masks: np.ndarray = None
    sources: list = None

    @property
    def bands(self):
        return tuple(self.images)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return SpectralDataset({b: a[idx] for b, a in self.images.items()}, self.labels[idx],
                               None if self.masks is None else self.masks[idx],
                               None if self.sources is None else [self.sources[i] for i in idx])

    def class_counts(self):
        return {"cement": int(np.sum(self.labels == CEMENT)), "landcover": int(np.sum(self.labels == LANDCOVER))}


def synth_dataset(n_cement, n_landcover, bands=BANDS, h=32, seed=0, preset="separable"):
    if preset not in PRESETS:
        raise DataError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    bands = tuple(bands)
    labels = site_labels(n_cement, n_landcover, seed)
    n = len(labels)
    images = {b: np.empty((n, 3, h, h), dtype=np.float32) for b in bands}
    masks = np.empty((n, h, h), dtype=bool)
    sources = []
    for i, lab in enumerate(labels):
        chips = synth_site(seed, i, int(lab), bands, h, preset)
        for b in bands:
            images[b][i] = chips[b].pixels
        masks[i] = chips[bands[0]].mask
        sources.append(chips[bands[0]].source)
    return SpectralDataset(images, labels, masks, sources)


def parse_bands(spec):
    if isinstance(spec, str):
        spec = BANDS if spec.lower() == "all" else [spec]
    out = []
    for b in spec:
        key = b.upper()
        if key not in BAND_CODES:
            raise DataError(f"unknown band {b!r}")
        out.append(key)
    return tuple(out)


def synth_generate(n_cement, n_landcover, band="B76", h=32, seed=0, preset="separable", out_dir=None,
                   repetitions=5):
    """Generate synthetic chips, optionally writing chip files plus ``manifest.json``.

    Returns ``(manifest, dataset)``.
    """
    bands = parse_bands(band)
    ds = synth_dataset(n_cement, n_landcover, bands, h, seed, preset)
    records = []
    for i, lab in enumerate(ds.labels):
        for b in bands:
            rel = os.path.join(b.lower(), f"{b.lower()}_{i:06d}.fchp")
            records.append({"path": rel, "label": int(lab), "band": b, "site": i})
    manifest = {
        "format": "fusionnet-manifest",
        "version": 1,
        "size": h,
        "seed": seed,
        "preset": preset,
        "bands": list(bands),
        "n_sites": len(ds),
        "class_counts": ds.class_counts(),
        "chips": records,
        # Too few chips of a class to stratify: files are still written, without splits.
        "splits": ([split.to_dict() for split in repeated_splits(ds.labels, seed, repetitions)]
                   if min(n_cement, n_landcover) >= 5 else []),
    }
    if out_dir is not None:
        for b in bands:
            os.makedirs(os.path.join(out_dir, b.lower()), exist_ok=True)
        for rec in records:
            i = rec["site"]
            chip = Chip(ds.images[rec["band"]][i], rec["label"], rec["band"], ds.sources[i])
            chip.save(os.path.join(out_dir, rec["path"]))
        masks_path = os.path.join(out_dir, "masks.npy")
        np.save(masks_path, ds.masks)
        manifest["masks"] = "masks.npy"
        write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest, ds


def write_json(path, obj):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_manifest(path):
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "fusionnet-manifest":
        raise DataError(f"{path} is not a dataset manifest")
    return manifest


def load_dataset(manifest_path, bands=None):
    """Read every chip listed in a manifest back into a :class:`SpectralDataset`."""
    manifest = load_manifest(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    bands = tuple(manifest["bands"]) if bands is None else parse_bands(bands)
    missing = set(bands) - set(manifest["bands"])
    if missing:
        raise DataError(f"manifest has no chips for bands {sorted(missing)}")
    n, h = manifest["n_sites"], manifest["size"]
    images = {b: np.empty((n, 3, h, h), dtype=np.float32) for b in bands}
    labels = np.full(n, -1, dtype=np.int64)
    for rec in manifest["chips"]:
        if rec["band"] not in images:
            continue
        chip = Chip.load(os.path.join(root, rec["path"]))
        images[rec["band"]][rec["site"]] = chip.pixels
        labels[rec["site"]] = chip.label
    masks = None
    if manifest.get("masks"):
        masks = np.load(os.path.join(root, manifest["masks"]))
    return SpectralDataset(images, labels, masks), manifest


def file_digest(paths):
    h = hashlib.sha256()
    for p in sorted(paths):
        with open(p, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


# ----------------------------------------------------------------------
# splits and weighting

def _half_up_fifth(n):
    """``round(0.2 * n)`` with halves rounded up, in exact integer arithmetic."""
    return (2 * n + 5) // 10


def split_counts(n):
    """``(train, val, test)`` sizes for one class of ``n`` samples."""
    if n < 5:
        raise DataError(f"stratified split needs at least 5 samples per class, got {n}")
    n_test = _half_up_fifth(n)
    dev = n - n_test
    n_val = _half_up_fifth(dev)
    return dev - n_val, n_val, n_test


@dataclass
class Split:
    repetition: int
    seed: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def to_dict(self):
        return {"repetition": self.repetition, "seed": self.seed, "train": self.train.tolist(),
                "val": self.val.tolist(), "test": self.test.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["repetition"], d["seed"], *(np.asarray(d[k], dtype=np.int64) for k in ("train", "val", "test")))


def stratified_split(labels, seed, repetition=1):
    """Per-class 20% test, then 20% of the remainder as validation."""
    labels = np.asarray(labels)
    rng = np.random.default_rng([seed, repetition])
    parts = {"train": [], "val": [], "test": []}
    for cls in (CEMENT, LANDCOVER):
        idx = np.flatnonzero(labels == cls)
        n_train, n_val, n_test = split_counts(len(idx))
        idx = idx[rng.permutation(len(idx))]
        parts["test"].append(idx[:n_test])
        parts["val"].append(idx[n_test:n_test + n_val])
        parts["train"].append(idx[n_test + n_val:])
    return Split(repetition, seed, *(np.sort(np.concatenate(parts[k])) for k in ("train", "val", "test")))


def repeated_splits(labels, seed, repetitions=5):
    return [stratified_split(labels, seed, r) for r in range(1, repetitions + 1)]


def class_weights(labels_or_counts, mode="fixed"):
    """``[w_cement, w_landcover]``; ``"auto"`` gives inverse frequency with landcover fixed at 1."""
    if isinstance(labels_or_counts, dict):
        counts = (labels_or_counts["cement"], labels_or_counts["landcover"])
    else:
        labels = np.asarray(labels_or_counts)
        counts = (int(np.sum(labels == CEMENT)), int(np.sum(labels == LANDCOVER)))
    if min(counts) < 1:
        raise DataError(f"both classes must be present, got counts {counts}")
    if mode == "fixed":
        return list(DEFAULT_CLASS_WEIGHTS)
    if mode == "auto":
        return [counts[1] / counts[0], 1.0]
    raise ValueError(f"unknown class weight mode {mode!r}")


# ----------------------------------------------------------------------
# augmentation

ROTATE_P, HFLIP_P, VFLIP_P = 0.9, 0.5, 0.1


def draw_augmentation(rng):
    """Sample ``(quarter_turns, hflip, vflip)``: rotate with p=0.9, then h-flip p=0.5, v-flip p=0.1."""
    k = int(rng.integers(1, 4)) if rng.random() < ROTATE_P else 0
    hflip = rng.random() < HFLIP_P
    vflip = rng.random() < VFLIP_P
    return k, hflip, vflip


def apply_augmentation(pixels, params):
    k, hflip, vflip = params
    out = np.rot90(pixels, k, axes=(-2, -1)) if k else pixels
    if hflip:
        out = out[..., ::-1]
    if vflip:
        out = out[..., ::-1, :]
    return np.ascontiguousarray(out)


def augment(chip, rng):
    params = draw_augmentation(rng)
    mask = None if chip.mask is None else apply_augmentation(chip.mask, params)
    return Chip(apply_augmentation(chip.pixels, params), chip.label, chip.band_id, chip.source, mask)
