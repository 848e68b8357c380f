"""Loaders for image patches (PGM), the Mauna Loa CO2 record and honey-bee
tracks, plus a PGM writer for round trips."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .numerics import as_rng

log = logging.getLogger(__name__)

CO2_SENTINEL = -99.99
VARIANCE_FLOOR = 1e-12


class ParseError(ValueError):
    """Malformed input; ``offset`` is a byte offset or 1-based line number."""

    def __init__(self, message, offset=None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} (at {offset})")


class SchemaError(ValueError):
    pass


# --- PGM ---------------------------------------------------------------------

def _pgm_tokens(buf: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    out, i = [], 0
    while len(out) < count:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if i >= len(buf):
            raise ParseError("truncated PGM header", i)
        if buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace():
            j += 1
        out.append((buf[i:j], i))
        i = j
    return out, i


def load_pgm(path) -> np.ndarray:
    """Binary P5 greyscale image scaled to [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    toks, pos = _pgm_tokens(buf, 4)
    if toks[0][0] != b"P5":
        raise ParseError("not a binary PGM (expected magic P5)", 0)
    try:
        width, height, maxval = (int(t) for t, _ in toks[1:])
    except ValueError:
        bad = next(off for t, off in toks[1:] if not t.isdigit())
        raise ParseError("non-integer PGM header field", bad) from None
    if width <= 0 or height <= 0:
        raise ParseError("PGM dimensions must be positive", toks[1][1])
    if not 0 < maxval <= 255:
        raise ParseError(f"unsupported maxval {maxval}", toks[3][1])
    pos += 1  # single whitespace byte before the raster
    need = width * height
    if len(buf) - pos < need:
        raise ParseError(f"truncated PGM payload: {len(buf) - pos} of {need} bytes", len(buf))
    raster = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return raster.reshape(height, width).astype(np.float64) / maxval


def write_pgm(path, image, maxval: int = 255) -> None:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be 2-D")
    raster = np.clip(np.rint(img * maxval), 0, maxval).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (img.shape[1], img.shape[0], maxval))
        fh.write(raster.tobytes())


def extract_patches(images, count: int, size: int = 8, rng=None) -> np.ndarray:
    """Random ``size`` x ``size`` patches with the DC component removed.

    Returns a (size*size, count) matrix whose columns are row-major
    flattened patches. Images smaller than the patch are skipped.
    """
    rng = as_rng(rng)
    usable = []
    for i, img in enumerate(images):
        img = np.asarray(img, dtype=np.float64)
        if img.shape[0] < size or img.shape[1] < size:
            log.warning("image %d (%dx%d) smaller than patch size %d; skipped", i, *img.shape, size)
            continue
        usable.append(img)
    if not usable:
        raise ValueError("no image is large enough for the requested patch size")
    which = np.minimum((rng.uniform(count) * len(usable)).astype(np.intp), len(usable) - 1)
    u_row, u_col = rng.uniform(count), rng.uniform(count)
    out = np.empty((size * size, count))
    for j in range(count):
        img = usable[which[j]]
        r = min(int(u_row[j] * (img.shape[0] - size + 1)), img.shape[0] - size)
        c = min(int(u_col[j] * (img.shape[1] - size + 1)), img.shape[1] - size)
        patch = img[r : r + size, c : c + size].ravel()
        out[:, j] = patch - patch.mean()
    return out


# --- time series -------------------------------------------------------------

@dataclass
class TimeSeries:
    times: np.ndarray
    channels: dict
    missing: np.ndarray = field(default=None)
    dropped: int = 0
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        n = self.times.size
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        for name, col in self.channels.items():
            if len(col) != n:
                raise ValueError(f"channel {name!r} has {len(col)} entries, expected {n}")
        if self.missing is None:
            self.missing = np.zeros(n, dtype=bool)

    def __len__(self):
        return self.times.size

    def matrix(self) -> np.ndarray:
        """Channels stacked as an (n, channels) array."""
        return np.column_stack([np.asarray(c, dtype=np.float64) for c in self.channels.values()])


@dataclass
class CO2Data:
    """Mauna Loa record split at ``split_year``; ``y_*`` are centred on the
    training mean, which is kept in ``offset``."""

    series: TimeSeries
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    offset: float


def _read_co2_rows(path):
    rows = []
    with open(path) as fh:
        text = fh.read()
    lines = text.splitlines()
    first = next((ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")), "")
    if "," in first:
        # fallback layout: decimal-date, ppm (optional header row)
        reader = csv.reader(lines)
        seen_header = False
        for lineno, rec in enumerate(reader, 1):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            try:
                t, v = float(rec[0]), float(rec[1])
            except (ValueError, IndexError):
                if not rows and not seen_header and any(ch.isalpha() for ch in rec[0]):
                    seen_header = True
                    continue
                raise ParseError("unparseable CO2 row", lineno) from None
            rows.append((int(np.floor(t)), t, v))
        return rows
    for lineno, line in enumerate(lines, 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        try:
            year, dec, avg = int(parts[0]), float(parts[2]), float(parts[3])
            int(parts[1])
        except (ValueError, IndexError):
            raise ParseError("unparseable CO2 row", lineno) from None
        rows.append((year, dec, avg))
    return rows


def load_co2(path, split_year: int = 2004) -> CO2Data:
    """Monthly CO2 (NOAA whitespace layout or a two-column CSV).

    Rows holding the -99.99 sentinel are dropped and counted. Training data
    are months before ``split_year``.
    """
    rows = _read_co2_rows(path)
    if not rows:
        raise ParseError("no CO2 rows found")
    year = np.array([r[0] for r in rows])
    t = np.array([r[1] for r in rows])
    v = np.array([r[2] for r in rows])
    bad = np.isclose(v, CO2_SENTINEL) | (v < 0)
    series = TimeSeries(t[~bad], {"co2": v[~bad]}, dropped=int(bad.sum()),
                        meta={"source": os.fspath(path)})
    year = year[~bad]
    train = year < split_year
    if not train.any():
        raise ValueError(f"no CO2 rows before {split_year}")
    offset = float(series.channels["co2"][train].mean())
    y = series.channels["co2"] - offset
    return CO2Data(series, series.times[train], y[train], series.times[~train], y[~train], offset)


def load_bee(path) -> TimeSeries:
    """Honey-bee track CSV with header ``x,y,theta[,label]``.

    Returns channels (x, y, cos theta, sin theta), each standardized to zero
    mean and unit variance. Labels, if present, are kept as integers.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = [c.strip() for c in (reader.fieldnames or [])]
        missing = {"x", "y", "theta"} - set(cols)
        if missing:
            raise SchemaError(f"bee CSV lacks columns {sorted(missing)}")
        recs = [{k.strip(): v for k, v in r.items()} for r in reader]
    if not recs:
        raise SchemaError("bee CSV has no rows")
    try:
        x = np.array([float(r["x"]) for r in recs])
        y = np.array([float(r["y"]) for r in recs])
        th = np.array([float(r["theta"]) for r in recs])
    except ValueError as exc:
        raise ParseError(f"bad numeric field: {exc}") from None
    raw = {"x": x, "y": y, "cos": np.cos(th), "sin": np.sin(th)}
    chans, scale = {}, {}
    for name, col in raw.items():
        sd = np.sqrt(max(col.var(), VARIANCE_FLOOR))
        chans[name] = (col - col.mean()) / sd
        scale[name] = (float(col.mean()), float(sd))
    labels = None
    if "label" in cols:
        labels = np.array([int(float(r["label"])) for r in recs])
    # scale maps channel -> (mean, sd) used for standardization
    return TimeSeries(np.arange(len(recs), dtype=np.float64), chans, labels=labels,
                      meta={"source": os.fspath(path), "scale": scale})
