"""Image cubes, label maps, window extraction and synthetic data.

Binary formats (all little-endian)::

    cube   b"PRICUBE1" | u32 rows | u32 cols | u32 bands | rows*cols*bands f32
    labels b"PRILAB01" | u32 rows | u32 cols | rows*cols u16

Cube values are stored pixel-major (row, col, band); labels row-major with
0 meaning "unlabeled".
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CubeFormatError, DomainError

CUBE_MAGIC = b"PRICUBE1"
LABEL_MAGIC = b"PRILAB01"
_CUBE_HEADER = struct.Struct("<8sIII")
_LABEL_HEADER = struct.Struct("<8sII")


@dataclass(frozen=True, eq=False)
class HyperCube:
    """Dense ``rows x cols x bands`` cube held as float64."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise DomainError(f"cube data must be a non-empty 3-D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DomainError("cube contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    @property
    def bands(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def pixels(self):
        """All spectra as an ``(rows*cols, bands)`` matrix, row-major."""
        return self.data.reshape(-1, self.bands)

    def band_stats(self):
        """Per-band ``(min, max, mean, std)`` arrays."""
        px = self.pixels()
        return px.min(axis=0), px.max(axis=0), px.mean(axis=0), px.std(axis=0)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-pixel class ids; 0 marks unlabeled pixels."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels)
        if labels.ndim != 2 or min(labels.shape) < 1:
            raise DomainError(f"label map must be a non-empty 2-D array, got shape {labels.shape}")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise DomainError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.min() < 0 or labels.max() > 0xFFFF:
            raise DomainError("labels must lie in 0..65535")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self):
        return self.labels.shape

    @property
    def classes(self):
        """Sorted class ids present (excluding 0)."""
        ids = np.unique(self.labels)
        return ids[ids > 0]

    def flat(self):
        return self.labels.reshape(-1)

    def check_matches(self, cube):
        if self.shape != cube.shape[:2]:
            raise DomainError(f"label map shape {self.shape} does not match cube {cube.shape[:2]}")


@dataclass(frozen=True, eq=False)
class Window:
    """Flattened ``width x width`` neighbourhood of one pixel."""

    width: int
    points: np.ndarray

    @property
    def center_index(self):
        return (self.width * self.width - 1) // 2

    @property
    def center(self):
        return self.points[self.center_index]


# --- I/O -------------------------------------------------------------------


def save_cube(cube, path):
    data = np.ascontiguousarray(cube.data, dtype="<f4")
    if not np.all(np.isfinite(data)):
        raise DomainError("cube values overflow float32")
    with open(path, "wb") as fh:
        fh.write(_CUBE_HEADER.pack(CUBE_MAGIC, *cube.shape))
        fh.write(data.tobytes())


def load_cube(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _CUBE_HEADER.size:
        raise CubeFormatError("truncated cube header", offset=len(raw))
    magic, m, n, d = _CUBE_HEADER.unpack_from(raw)
    if magic != CUBE_MAGIC:
        raise CubeFormatError(f"bad cube magic {magic!r}", offset=0)
    if min(m, n, d) == 0:
        raise CubeFormatError(f"cube header declares an empty cube {m}x{n}x{d}", offset=8)
    expected = _CUBE_HEADER.size + 4 * m * n * d
    if len(raw) < expected:
        raise CubeFormatError(
            f"truncated payload: header declares {m}x{n}x{d} ({expected} bytes), file has {len(raw)}",
            offset=len(raw),
        )
    if len(raw) > expected:
        raise CubeFormatError("trailing bytes after cube payload", offset=expected)
    data = np.frombuffer(raw, dtype="<f4", offset=_CUBE_HEADER.size)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise CubeFormatError("non-finite cube value", offset=_CUBE_HEADER.size + 4 * int(bad[0]))
    return HyperCube(data.astype(np.float64).reshape(m, n, d))


def save_labels(labels, path):
    with open(path, "wb") as fh:
        fh.write(_LABEL_HEADER.pack(LABEL_MAGIC, *labels.shape))
        fh.write(np.ascontiguousarray(labels.labels, dtype="<u2").tobytes())


def load_labels(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _LABEL_HEADER.size:
        raise CubeFormatError("truncated label header", offset=len(raw))
    magic, m, n = _LABEL_HEADER.unpack_from(raw)
    if magic != LABEL_MAGIC:
        raise CubeFormatError(f"bad label magic {magic!r}", offset=0)
    if min(m, n) == 0:
        raise CubeFormatError(f"label header declares an empty map {m}x{n}", offset=8)
    expected = _LABEL_HEADER.size + 2 * m * n
    if len(raw) < expected:
        raise CubeFormatError(
            f"truncated payload: header declares {m}x{n} ({expected} bytes), file has {len(raw)}",
            offset=len(raw),
        )
    if len(raw) > expected:
        raise CubeFormatError("trailing bytes after label payload", offset=expected)
    labels = np.frombuffer(raw, dtype="<u2", offset=_LABEL_HEADER.size)
    return LabelMap(labels.astype(np.int64).reshape(m, n))


def sniff_kind(path):
    """Return ``"cube"`` or ``"labels"`` from a binary file's magic, else None."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
    return {CUBE_MAGIC: "cube", LABEL_MAGIC: "labels"}.get(magic)


# CSV layouts: a cube is one line per pixel, "row,col,b1,...,bd" after a
# header line; a label map is the plain matrix, one image row per line.


def save_cube_csv(cube, path):
    m, n, d = cube.shape
    rr, cc = np.divmod(np.arange(m * n), n)
    header = ",".join(["row", "col"] + [f"b{k + 1}" for k in range(d)])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for r, c, px in zip(rr, cc, cube.pixels()):
            fh.write(f"{r},{c}," + ",".join(repr(float(v)) for v in px) + "\n")


def load_cube_csv(path):
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] < 3:
        raise DomainError(f"{path}: cube CSV needs row, col and at least one band column")
    rc = table[:, :2]
    if np.any(rc != np.round(rc)) or np.any(rc < 0):
        raise DomainError(f"{path}: row/col columns must be nonnegative integers")
    rows, cols = rc.astype(np.int64).T
    m, n = rows.max() + 1, cols.max() + 1
    flat = rows * n + cols
    if table.shape[0] != m * n or np.unique(flat).size != m * n:
        raise DomainError(f"{path}: CSV must list every pixel of the {m}x{n} grid exactly once")
    data = np.empty((m * n, table.shape[1] - 2))
    data[flat] = table[:, 2:]
    return HyperCube(data.reshape(m, n, -1))


def save_labels_csv(labels, path):
    np.savetxt(path, labels.labels, fmt="%d", delimiter=",")


def load_labels_csv(path):
    table = np.loadtxt(path, delimiter=",", ndmin=2)
    if np.any(table != np.round(table)):
        raise DomainError(f"{path}: label CSV must contain integers")
    return LabelMap(table.astype(np.int64))


# --- preprocessing ----------------------------------------------------------


def normalize(cube):
    """Min-max scale every band to ``[0, 1]``; constant bands become 0."""
    px = cube.pixels()
    lo = px.min(axis=0)
    span = px.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    out = (px - lo) / safe
    out[:, span == 0] = 0.0
    return HyperCube(out.reshape(cube.shape))


def _check_width(cube, width):
    if int(width) != width or width < 1 or width % 2 == 0:
        raise DomainError(f"window width must be an odd positive integer, got {width!r}")
    limit = 2 * min(cube.rows, cube.cols) - 1
    if width > limit:
        raise DomainError(f"window width {width} exceeds {limit} for a {cube.rows}x{cube.cols} image")
    return int(width)


def pad_reflect(data, half):
    """Mirror-pad the two spatial axes without repeating the edge pixel."""
    return np.pad(data, ((half, half), (half, half), (0, 0)), mode="reflect")


def extract_window(cube, row, col, width):
    width = _check_width(cube, width)
    if not (0 <= row < cube.rows and 0 <= col < cube.cols):
        raise DomainError(f"pixel ({row}, {col}) outside a {cube.rows}x{cube.cols} image")
    half = width // 2
    rows = _reflect_index(np.arange(row - half, row + half + 1), cube.rows)
    cols = _reflect_index(np.arange(col - half, col + half + 1), cube.cols)
    pts = cube.data[np.ix_(rows, cols)].reshape(width * width, cube.bands)
    return Window(width, pts)


def _reflect_index(idx, size):
    if size == 1:
        return np.zeros_like(idx)
    period = 2 * (size - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= size, period - idx, idx)


def window_stack(cube, width, start, stop, padded=None):
    """Windows of the flat pixel range ``[start, stop)`` as ``(k, width^2, bands)``."""
    width = _check_width(cube, width)
    half = width // 2
    if padded is None:
        padded = pad_reflect(cube.data, half)
    views = np.lib.stride_tricks.sliding_window_view(padded, (width, width), axis=(0, 1))
    flat = np.arange(start, stop)
    r, c = np.divmod(flat, cube.cols)
    # views[r, c] is (bands, width, width)
    win = views[r, c]
    return np.ascontiguousarray(np.moveaxis(win, 1, -1)).reshape(len(flat), width * width, cube.bands)


# --- synthetic data ---------------------------------------------------------


def synth_intersect(n_points=500, noise_sd=0.05, seed=0):
    """Two crossing segments (the diagonals of ``[-1, 1]^2``) plus noise."""
    if n_points < 4:
        raise DomainError("n_points must be >= 4")
    rng = np.random.default_rng(seed)
    n_a = n_points // 2
    t = rng.uniform(-1.0, 1.0, size=n_points)
    pts = np.empty((n_points, 2))
    pts[:n_a, 0] = t[:n_a]
    pts[:n_a, 1] = t[:n_a]
    pts[n_a:, 0] = t[n_a:]
    pts[n_a:, 1] = -t[n_a:]
    if noise_sd > 0:
        pts += rng.normal(scale=noise_sd, size=pts.shape)
    return pts


def synth_labeled_cube(blocks, bands, noise_sd, seed=0, block_size=1, separation=1.0,
                       class_means=None):
    """Piecewise-constant labeled cube.

    ``blocks`` is a 2-D array of class ids (>= 1) giving the block layout;
    every entry is expanded to a ``block_size`` square of pixels.  Each
    class gets a random mean spectrum in ``[0, separation]`` unless
    ``class_means`` (row ``c - 1`` for class ``c``) is given; pixels are
    their class mean plus i.i.d. Gaussian noise.
    """
    layout = np.asarray(blocks, dtype=np.int64)
    if layout.ndim != 2 or layout.min() < 1:
        raise DomainError("blocks must be a 2-D layout of class ids >= 1")
    classes = np.unique(layout)
    if classes.size < 2:
        raise DomainError("blocks must contain at least two classes")
    rng = np.random.default_rng(seed)
    means = rng.uniform(0.0, separation, size=(int(classes.max()) + 1, bands))
    if class_means is not None:
        given = np.asarray(class_means, dtype=np.float64)
        if given.shape != (int(classes.max()), bands):
            raise DomainError(f"class_means must be ({int(classes.max())}, {bands})")
        means[1:] = given
    labels = np.kron(layout, np.ones((block_size, block_size), dtype=np.int64))
    data = means[labels]
    if noise_sd > 0:
        data = data + rng.normal(scale=noise_sd, size=data.shape)
    return HyperCube(data), LabelMap(labels)


def random_fields(rows, cols, n_classes, min_side=2, seed=0):
    """Random guillotine partition of a ``rows x cols`` grid into rectangular
    fields, each assigned one of ``n_classes`` ids (every id used at least
    once when there are enough fields).  Field sizes vary from ``min_side``
    up to the whole image, mimicking fields of mixed size in a scene.
    """
    if n_classes < 2:
        raise DomainError("need at least two classes")
    rng = np.random.default_rng(seed)
    layout = np.zeros((rows, cols), dtype=np.int64)
    rects = []
    stack = [(0, rows, 0, cols)]
    while stack:
        r0, r1, c0, c1 = stack.pop()
        h, w = r1 - r0, c1 - c0
        can_h = h >= 2 * min_side
        can_w = w >= 2 * min_side
        # larger rectangles are more likely to be split
        if (can_h or can_w) and rng.random() < min(0.95, (h * w) / (6.0 * min_side * min_side)):
            if can_h and (not can_w or rng.random() < h / (h + w)):
                cut = int(rng.integers(r0 + min_side, r1 - min_side + 1))
                stack += [(r0, cut, c0, c1), (cut, r1, c0, c1)]
            else:
                cut = int(rng.integers(c0 + min_side, c1 - min_side + 1))
                stack += [(r0, r1, c0, cut), (r0, r1, cut, c1)]
        else:
            rects.append((r0, r1, c0, c1))
    ids = rng.permutation(np.resize(np.arange(1, n_classes + 1), len(rects)))
    for (r0, r1, c0, c1), cid in zip(rects, ids):
        layout[r0:r1, c0:c1] = cid
    return layout


def synth_scene(size=24, groups=2, per_group=2, bands=10, noise_sd=0.1, within=0.15,
                seed=0, layout_seed=0, spectra_seed=100):
    """Labeled test scene with confusable classes on fields of mixed size.

    Class mean spectra come in ``groups`` well-separated groups of
    ``per_group`` classes each; classes inside a group differ by a random
    offset of norm about ``within``, comparable to the per-pixel noise, so
    they are hard to tell apart from a single spectrum.  The layout is a
    :func:`random_fields` partition of a ``size x size`` image.  The three
    seeds drive the pixel noise, the layout and the class spectra.
    """
    rng = np.random.default_rng(spectra_seed)
    n_classes = groups * per_group
    base = rng.uniform(0.0, 1.0, size=(groups, bands))
    offsets = within * rng.standard_normal((n_classes, bands)) / np.sqrt(bands)
    means = np.repeat(base, per_group, axis=0) + offsets
    layout = random_fields(size, size, n_classes, min_side=2, seed=layout_seed)
    return synth_labeled_cube(layout, bands, noise_sd, seed=seed, class_means=means)
