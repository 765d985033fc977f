"""Image files, preprocessing, synthetic datasets and splits.

Images are ``H x W x C`` float arrays. Files are 8-bit binary PGM (P5,
grayscale) or PPM (P6, RGB). Preprocessing resizes bilinearly with
half-pixel centers and scales to [0, 1].
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .errors import DataError

SPLITS = ("train", "val", "test")


def _read_token(buf, pos):
    """Next whitespace-delimited header token, skipping ``#`` comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise DataError("truncated PNM header")
    return buf[start:pos], pos


def decode_pnm(buf):
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise DataError(f"unsupported image magic {magic!r} (need P5 or P6)")
    try:
        width, pos = _read_token(buf, pos)
        height, pos = _read_token(buf, pos)
        maxval, pos = _read_token(buf, pos)
        width, height, maxval = int(width), int(height), int(maxval)
    except ValueError as e:
        raise DataError("malformed PNM header") from e
    if width < 1 or height < 1:
        raise DataError("image dimensions must be positive")
    if maxval != 255:
        raise DataError(f"only 8-bit images are supported (maxval {maxval})")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise DataError("malformed PNM header")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    size = width * height * channels
    payload = buf[pos:pos + size]
    if len(payload) < size:
        raise DataError(f"truncated payload: expected {size} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels).astype(np.float64)


def load_image(path, channels=None):
    """Read a PGM/PPM file as ``H x W x C`` values in [0, 255].

    ``channels=3`` replicates a grayscale image to three channels.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    img = decode_pnm(data)
    if channels == 3 and img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    elif channels is not None and channels != img.shape[2]:
        raise DataError(f"cannot convert {img.shape[2]}-channel image to {channels} channels")
    return img


def encode_pnm(img):
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    if c not in (1, 3):
        raise ValueError("PNM images need 1 or 3 channels")
    if img.min() < 0 or img.max() > 255:
        raise ValueError("pixel values must lie in [0, 255]")
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode() + np.rint(img).astype(np.uint8).tobytes()


def save_image(path, img):
    Path(path).write_bytes(encode_pnm(img))


def _axis_weights(n_in, n_out):
    """Source indices and weights for half-pixel-center linear interpolation."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img, size):
    """Resize ``H x W x C`` to ``size = (H', W')`` (half-pixel centers, edge clamped)."""
    img = np.asarray(img, dtype=np.float64)
    th, tw = size
    if th < 1 or tw < 1:
        raise ValueError("target size must be at least 1x1")
    h, w = img.shape[:2]
    if (h, w) == (th, tw):
        return img.copy()
    y0, y1, fy = _axis_weights(h, th)
    x0, x1, fx = _axis_weights(w, tw)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    # guard against rounding outside the input range
    return np.clip(out, img.min(), img.max())


def preprocess(img, target=(224, 224)):
    """Resize to ``target`` and scale 0-255 values to [0, 1]; output has 3 channels."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return resize_bilinear(img, target) / 255.0


@dataclass(frozen=True)
class SyntheticSpec:
    """Class ``c`` images contain ``c + 1`` Gaussian blobs on a dim background.

    ``blob_sigma`` and ``blob_intensity`` are either one value for every class
    or a sequence with one value per class.
    """

    num_samples: int = 400
    image_size: tuple = (32, 32)
    num_classes: int = 2
    blob_sigma: float = 2.5
    blob_intensity: float = 0.6
    background: float = 0.1
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.num_samples < 1 or self.num_classes < 1:
            raise ValueError("num_samples and num_classes must be positive")
        for name in ("blob_sigma", "blob_intensity"):
            value = getattr(self, name)
            if not np.isscalar(value):
                value = tuple(float(v) for v in value)
                if len(value) != self.num_classes:
                    raise ValueError(f"{name} needs one value per class ({self.num_classes})")
                object.__setattr__(self, name, value)
        if min(self.per_class("blob_sigma")) <= 0 or self.noise < 0:
            raise ValueError("blob_sigma must be positive and noise non-negative")

    def per_class(self, name):
        value = getattr(self, name)
        return (value,) * self.num_classes if np.isscalar(value) else value


def generate_synthetic(spec: SyntheticSpec):
    """Return ``(images, labels)``: float images in [0, 1] of shape ``N x H x W x 3``.

    Labels cycle ``0, 1, ..., k-1`` so classes are exactly balanced when
    ``num_samples`` is divisible by ``num_classes``.
    """
    h, w = spec.image_size
    labels = np.arange(spec.num_samples) % spec.num_classes
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sigmas, intensities = spec.per_class("blob_sigma"), spec.per_class("blob_intensity")
    images = np.empty((spec.num_samples, h, w, 3))
    for i, c in enumerate(labels):
        key = rng.derive(spec.seed, "synthetic", i)
        sigma = sigmas[c]
        margin_y, margin_x = min(2 * sigma, (h - 1) / 2), min(2 * sigma, (w - 1) / 2)
        u = rng.uniform(rng.derive(key, "centers"), (c + 1, 2))
        cy = margin_y + u[:, 0] * (h - 1 - 2 * margin_y)
        cx = margin_x + u[:, 1] * (w - 1 - 2 * margin_x)
        d2 = (yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2
        img = spec.background + intensities[c] * np.exp(-d2 / (2 * sigma ** 2)).sum(axis=0)
        img = np.repeat(img[..., None], 3, axis=2)
        if spec.noise > 0:
            img = img + spec.noise * rng.normal(rng.derive(key, "noise"), img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    return images, labels


def _augment(cap, flow, source, sink):
    """One BFS augmenting path of unit capacity; returns False when none exists."""
    n = len(cap)
    parent = [-1] * n
    parent[source] = source
    queue = [source]
    for u in queue:
        for v in range(n):
            if parent[v] < 0 and cap[u][v] - flow[u][v] > 0:
                parent[v] = u
                queue.append(v)
    if parent[sink] < 0:
        return False
    v = sink
    while v != source:
        u = parent[v]
        flow[u][v] += 1
        flow[v][u] -= 1
        v = u
    return True


def _allocate(class_sizes, fractions):
    """Per-class split counts, each cell and each split total within one of its exact quota.

    Cells are floored, then the leftover units are placed by a small max-flow
    (classes -> splits): first up to the floor of each split's remaining
    quota, then up to its ceiling. Flow integrality guarantees every class is
    placed with at most one extra unit per cell.
    """
    sizes = np.asarray(class_sizes, dtype=np.int64)
    quota = np.outer(sizes, np.asarray(fractions, dtype=np.float64))
    counts = np.floor(quota).astype(np.int64)
    frac = quota - counts
    need_c = sizes - counts.sum(axis=1)
    col = frac.sum(axis=0)
    k, s = quota.shape
    source, sink = k + s, k + s + 1
    cap = [[0] * (k + s + 2) for _ in range(k + s + 2)]
    flow = [[0] * (k + s + 2) for _ in range(k + s + 2)]
    for c in range(k):
        cap[source][c] = int(need_c[c])
        for j in range(s):
            cap[c][k + j] = 1 if frac[c, j] > 1e-12 else 0
    for bound in (np.floor(col + 1e-9), np.ceil(col - 1e-9)):
        for j in range(s):
            cap[k + j][sink] = int(bound[j])
        while _augment(cap, flow, source, sink):
            pass
    for c in range(k):
        for j in range(s):
            counts[c, j] += flow[c][k + j]
    if not np.array_equal(counts.sum(axis=1), sizes):
        raise ValueError("cannot allocate a stratified split")  # unreachable by flow integrality
    return counts


def split(labels, fractions=(0.8, 0.1, 0.1), seed=0):
    """Seeded stratified split into train/val/test index arrays (each sorted)."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    labels = np.asarray(labels)
    classes = np.unique(labels)
    members = [np.flatnonzero(labels == c) for c in classes]
    counts = _allocate([len(m) for m in members], fractions)
    out = [[], [], []]
    for ci, (c, idx) in enumerate(zip(classes, members)):
        idx = idx[rng.permutation(rng.derive(seed, "split", int(c)), len(idx))]
        start = 0
        for j in range(3):
            out[j].append(idx[start:start + counts[ci, j]])
            start += counts[ci, j]
    return tuple(np.sort(np.concatenate(parts)) if parts else np.array([], dtype=np.int64) for parts in out)


@dataclass
class ManifestRecord:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    records: list
    class_names: list = field(default_factory=list)
    source: str = ""

    @property
    def num_classes(self):
        return len(self.class_names) or (max(r.label for r in self.records) + 1)


def read_manifest(path, check_files=True):
    """Parse a ``path,label,split`` CSV; relative paths resolve against its directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["path", "label", "split"]:
        raise DataError("manifest header must be 'path,label,split'")
    records = []
    for row in reader:
        try:
            label = int(row["label"])
        except (TypeError, ValueError) as e:
            raise DataError(f"bad label in manifest row {row}") from e
        if row["split"] not in SPLITS or label < 0:
            raise DataError(f"bad manifest row {row}")
        p = Path(row["path"])
        if not p.is_absolute():
            p = path.parent / p
        if check_files and not p.exists():
            raise DataError(f"missing image {p}")
        records.append(ManifestRecord(str(p), label, row["split"]))
    if not records:
        raise DataError("manifest has no records")
    return DatasetManifest(records, source=str(path))


def write_manifest(path, records):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["path", "label", "split"])
        for r in records:
            w.writerow([r.path, r.label, r.split])


def load_manifest_split(manifest: DatasetManifest, which, target=(224, 224)):
    """Preprocessed ``(images, labels)`` for one split, in manifest order."""
    recs = [r for r in manifest.records if r.split == which]
    if not recs:
        return np.empty((0, *target, 3)), np.empty(0, dtype=np.int64)
    images = np.stack([preprocess(load_image(r.path), target) for r in recs])
    return images, np.array([r.label for r in recs])
