"""Multiscale, multi-beta, multilayer spectral-spatial feature extraction.

One *unit* characterises every pixel by solving the relevant-information
problem on its sliding window for each (width, beta) pair, concatenates the
window-centre results (width-major, beta-minor) and reduces them with a
shrinkage LDA fitted on the training pixels.  Units are stacked: each layer
consumes the previous layer's LDA output as a new cube, and the final
feature of a pixel is the concatenation of all layer outputs.
"""

import enum
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np
import scipy.linalg

from .cube import HyperCube, extract_window, pad_reflect, window_stack
from .errors import DomainError, NumericalError
from .solver import solve_stack

log = logging.getLogger(__name__)

# Rough per-chunk memory budget for the batched window solver.
_CHUNK_BYTES = 48 * 2**20


class Bandwidth(enum.Enum):
    SILVERMAN_MIDPOINT = "silverman"
    FIXED = "fixed"


class WindowMode(enum.Enum):
    WHOLE = "whole"
    CENTER = "center"


@dataclass(frozen=True)
class PipelineConfig:
    scales: tuple = (3, 5, 7, 9, 11, 13)
    betas: tuple = (2.0, 3.0, 4.0)
    layers: int = 5
    tau: int = 3
    bandwidth: Bandwidth = Bandwidth.SILVERMAN_MIDPOINT
    deltas: tuple = ()
    lda_shrinkage: float = 0.1
    lda_dim: int = None
    window_mode: WindowMode = WindowMode.WHOLE
    knn_k: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "deltas", tuple(float(x) for x in self.deltas))
        object.__setattr__(self, "bandwidth", Bandwidth(self.bandwidth))
        object.__setattr__(self, "window_mode", WindowMode(self.window_mode))
        if not self.scales or any(s < 1 or s % 2 == 0 for s in self.scales):
            raise DomainError(f"scales must be a nonempty list of odd widths, got {self.scales}")
        if not self.betas or any(not np.isfinite(b) or b < 0 for b in self.betas):
            raise DomainError(f"betas must be a nonempty list of nonnegative reals, got {self.betas}")
        if int(self.layers) != self.layers or self.layers < 1:
            raise DomainError("layers must be a positive integer")
        if int(self.tau) != self.tau or self.tau < 1:
            raise DomainError("tau must be a positive integer")
        if not 0.0 <= self.lda_shrinkage <= 1.0:
            raise DomainError("lda_shrinkage must lie in [0, 1]")
        if self.lda_dim is not None and self.lda_dim < 1:
            raise DomainError("lda_dim must be positive")
        if self.knn_k < 1:
            raise DomainError("knn_k must be positive")
        if self.bandwidth is Bandwidth.FIXED:
            if len(self.deltas) not in (1, self.layers):
                raise DomainError("fixed bandwidth needs one delta or one per layer")
            if any(not d > 0 for d in self.deltas):
                raise DomainError("fixed deltas must be positive")

    def fixed_delta(self, layer_index):
        return self.deltas[0] if len(self.deltas) == 1 else self.deltas[layer_index]

    def raw_dim(self, bands):
        return bands * len(self.scales) * len(self.betas)

    def reduced_dim(self, n_classes, raw_dim):
        target = n_classes - 1 if self.lda_dim is None else self.lda_dim
        return min(target, raw_dim)

    def cost_estimate(self, rows, cols, bands, n_classes):
        """Kernel evaluations ~ d * N^2 * tau * S * B summed over pixels and layers."""
        total = 0
        d = bands
        for layer in range(self.layers):
            per_pixel = sum(d * (w * w) ** 2 for w in self.scales) * self.tau * len(self.betas)
            total += per_pixel * rows * cols
            d = self.reduced_dim(n_classes, self.raw_dim(d))
        return total


@dataclass
class FeatureMatrix:
    """Per-pixel features of an ``rows x cols`` image, row-major."""

    features: np.ndarray
    rows: int
    cols: int

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def coords(self):
        r, c = np.divmod(np.arange(self.rows * self.cols), self.cols)
        return np.stack([r, c], axis=1)

    def to_cube(self):
        return HyperCube(self.features.reshape(self.rows, self.cols, self.dim))


@dataclass
class LdaModel:
    projection: np.ndarray
    class_means: np.ndarray
    global_mean: np.ndarray
    classes: np.ndarray
    eigenvalues: np.ndarray
    shrinkage: float

    def transform(self, features):
        return (np.asarray(features, dtype=np.float64) - self.global_mean) @ self.projection


@dataclass
class LayerOutput:
    features: FeatureMatrix
    raw_dim: int
    reduced_dim: int
    delta: float = None
    seconds: float = 0.0


@dataclass
class LayerRecord:
    output: LayerOutput
    model: LdaModel


# --- bandwidth ------------------------------------------------------------


def silverman_range(sample):
    """Kernel-width range from the multivariate Silverman rule.

    Returns ``factor * sigma_min`` and ``factor * sigma_max`` where
    ``factor = (4 / (d + 2)) ** (1 / (d + 4)) * s ** (-1 / (d + 4))`` and the
    sigmas are the smallest and largest per-dimension standard deviations
    (``ddof=1``).  Constant dimensions are ignored for the lower end.
    """
    x = np.asarray(sample, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    s, d = x.shape
    if s < 2:
        raise DomainError("the Silverman rule needs at least two points")
    sd = x.std(axis=0, ddof=1)
    nonzero = sd[sd > 0]
    if nonzero.size == 0:
        raise DomainError("every dimension of the sample is constant")
    factor = (4.0 / (d + 2)) ** (1.0 / (d + 4)) * s ** (-1.0 / (d + 4))
    return factor * nonzero.min(), factor * nonzero.max()


def layer_delta(cube, cfg, layer_index):
    if cfg.bandwidth is Bandwidth.FIXED:
        return cfg.fixed_delta(layer_index)
    lo, hi = silverman_range(cube.pixels())
    return 0.5 * (lo + hi)


# --- per-pixel characterisation ---------------------------------------------


def characterize_pixel(cube, row, col, width, cfg, center_only=False):
    """Window-centre row of the solved representation for one pixel.

    ``cfg`` is a :class:`~mpri.solver.PriConfig`; the window itself is the
    initial representation.
    """
    win = extract_window(cube, row, col, width)
    Y = solve_stack(win.points[None], float(cfg.beta), float(cfg.delta), cfg.tau,
                    cfg.displacement_tol, center_only=center_only)
    return Y[0, win.center_index].copy()


def _chunk_size(width, bands):
    n = width * width
    per_window = n * n * 8 * 4 + n * bands * 8 * 6
    return max(1, _CHUNK_BYTES // per_window)


def characterize_cube(cube, width, beta, delta, tau, center_only=False, threads=1):
    """Characterise every pixel at one (width, beta); returns ``(rows*cols, bands)``."""
    half = width // 2
    padded = pad_reflect(cube.data, half)
    total = cube.rows * cube.cols
    step = _chunk_size(width, cube.bands)
    center = (width * width - 1) // 2
    out = np.empty((total, cube.bands))

    def work(start):
        stop = min(start + step, total)
        X = window_stack(cube, width, start, stop, padded=padded)
        Y = solve_stack(X, beta, delta, tau, center_only=center_only)
        out[start:stop] = Y[:, center]

    starts = range(0, total, step)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)
    return out


# --- LDA ----------------------------------------------------------------------


def fit_regularized_lda(features, labels, shrinkage=0.1, out_dim=None):
    """Shrinkage LDA.

    Solves ``S_b w = lambda S_r w`` with the regularised within-class
    scatter ``S_r = (1 - g) S_w + g (tr(S_w) / D) I`` and keeps the leading
    ``out_dim`` eigenvectors (default ``C - 1``), normalised so that
    ``w' S_r w = 1``.  Each direction's sign is chosen so the lowest class id
    projects below the global mean.

    If ``S_w`` is identically zero the identity scale falls back to
    ``tr(S_t) / D`` (total scatter), then to 1.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DomainError("features must be (n, D) with one label per row")
    classes = np.unique(y)
    if classes.size < 2:
        raise DomainError(f"LDA needs at least two classes, got {classes.size}")
    if not 0.0 <= shrinkage <= 1.0:
        raise DomainError("shrinkage must lie in [0, 1]")
    C = classes.size
    D = X.shape[1]
    if out_dim is None:
        out_dim = C - 1
    if out_dim < 1 or out_dim > C - 1:
        raise DomainError(f"out_dim must lie in 1..{C - 1}, got {out_dim}")
    out_dim = min(out_dim, D)

    global_mean = X.mean(axis=0)
    means = np.empty((C, D))
    Sw = np.zeros((D, D))
    Sb = np.zeros((D, D))
    for i, c in enumerate(classes):
        Xc = X[y == c]
        means[i] = Xc.mean(axis=0)
        centred = Xc - means[i]
        Sw += centred.T @ centred
        diff = (means[i] - global_mean)[:, None]
        Sb += Xc.shape[0] * (diff @ diff.T)

    scale = np.trace(Sw) / D
    if not scale > 0:
        centred = X - global_mean
        scale = np.einsum("ij,ij->", centred, centred) / D
        if not scale > 0:
            scale = 1.0
    Sr = (1.0 - shrinkage) * Sw
    Sr[np.diag_indices(D)] += shrinkage * scale

    try:
        vals, vecs = scipy.linalg.eigh(Sb, Sr, subset_by_index=[D - out_dim, D - 1])
    except np.linalg.LinAlgError as exc:
        hint = " (use shrinkage > 0)" if shrinkage == 0 else ""
        raise NumericalError(f"regularised within-class scatter is singular{hint}: {exc}") from exc
    order = np.argsort(vals, kind="stable")[::-1]
    vals = vals[order]
    W = vecs[:, order]

    ref = (means[0] - global_mean) @ W
    for j in range(W.shape[1]):
        s = ref[j]
        if s == 0:
            s = -W[np.argmax(np.abs(W[:, j])), j]
        if s > 0:
            W[:, j] = -W[:, j]
    return LdaModel(W, means, global_mean, classes, vals, float(shrinkage))


# --- units and stacking -----------------------------------------------------


def _check(cond, what):
    if not cond:
        raise RuntimeError(f"dimension bookkeeping failed: {what}")


def raw_features(cube, cfg, delta, threads=1, cache=None):
    """Concatenated window-centre representations, width-major then beta."""
    blocks = []
    center_only = cfg.window_mode is WindowMode.CENTER
    for width in cfg.scales:
        for beta in cfg.betas:
            key = (width, beta, delta, cfg.tau, center_only)
            block = None if cache is None else cache.get(key)
            if block is None:
                block = characterize_cube(cube, width, beta, delta, cfg.tau, center_only, threads)
                if cache is not None:
                    cache[key] = block
            blocks.append(block)
    raw = np.concatenate(blocks, axis=1)
    _check(raw.shape[1] == cfg.raw_dim(cube.bands),
           f"raw dim {raw.shape[1]} != {cube.bands}*{len(cfg.scales)}*{len(cfg.betas)}")
    return raw


def spectral_spatial_unit(cube, labels_train, cfg, layer_index=0, delta=None, threads=1, cache=None):
    """One PRI + LDA unit. Returns ``(LayerOutput, LdaModel)``."""
    labels_train.check_matches(cube)
    t0 = time.perf_counter()
    if delta is None:
        delta = layer_delta(cube, cfg, layer_index)
    train = labels_train.flat() > 0
    if np.unique(labels_train.flat()[train]).size < 2:
        raise DomainError("training labels must contain at least two classes")

    raw = raw_features(cube, cfg, delta, threads, cache)
    y = labels_train.flat()[train]
    n_classes = np.unique(y).size
    out_dim = cfg.reduced_dim(n_classes, raw.shape[1])
    model = fit_regularized_lda(raw[train], y, cfg.lda_shrinkage, out_dim)
    reduced = model.transform(raw)
    _check(reduced.shape[1] == out_dim, f"reduced dim {reduced.shape[1]} != {out_dim}")
    _check(out_dim <= n_classes - 1, "LDA output exceeds C-1")

    fm = FeatureMatrix(reduced, cube.rows, cube.cols)
    seconds = time.perf_counter() - t0
    log.info("layer %d: delta=%.4g raw=%d reduced=%d (%.2fs)",
             layer_index + 1, delta, raw.shape[1], out_dim, seconds)
    return LayerOutput(fm, raw.shape[1], out_dim, delta, seconds), model


def run_pipeline(cube, labels_train, cfg, threads=1, cache=None, history=None):
    """Run all layers and return the concatenated :class:`FeatureMatrix`.

    ``cache`` (a dict owned by the caller, tied to this ``cube``) memoises
    first-layer window solves, which do not depend on the labels.
    ``history``, if a list, receives one :class:`LayerRecord` per layer.
    """
    labels_train.check_matches(cube)
    layer_input = cube
    outputs = []
    for layer in range(cfg.layers):
        out, model = spectral_spatial_unit(
            layer_input, labels_train, cfg, layer, threads=threads,
            cache=cache if layer == 0 else None,
        )
        _check(out.raw_dim == cfg.raw_dim(layer_input.bands), f"layer {layer + 1} raw dim")
        outputs.append(out.features.features)
        if history is not None:
            history.append(LayerRecord(out, model))
        layer_input = out.features.to_cube()
    final = np.concatenate(outputs, axis=1)
    _check(final.shape[1] == sum(o.shape[1] for o in outputs), "final concatenation")
    return FeatureMatrix(final, cube.rows, cube.cols)


# --- config file ---------------------------------------------------------------

_KEYS = {
    "scales", "betas", "layers", "tau", "bandwidth.mode", "lda.shrinkage",
    "lda.dim", "seed", "knn.k", "window.mode",
}


def parse_config(text, base=None):
    """Parse the flat ``key = value`` config format.

    Recognised keys: ``scales``, ``betas`` (comma lists), ``layers``,
    ``tau``, ``bandwidth.mode`` (``silverman`` | ``fixed``),
    ``bandwidth.delta[l]`` (1-based layer), ``lda.shrinkage``, ``lda.dim``
    (integer or ``auto``), ``knn.k``, ``window.mode`` (``whole`` |
    ``center``) and ``seed``.  ``#`` starts a comment.
    """
    values = {}
    deltas = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("bandwidth.delta[") and key.endswith("]"):
            deltas[int(key[len("bandwidth.delta["):-1])] = float(value)
        elif key in _KEYS:
            values[key] = value
        else:
            raise DomainError(f"config line {lineno}: unknown key {key!r}")

    cfg = base or PipelineConfig()
    kw = {}
    if "scales" in values:
        kw["scales"] = [int(v) for v in values["scales"].split(",")]
    if "betas" in values:
        kw["betas"] = [float(v) for v in values["betas"].split(",")]
    for key, name, conv in [("layers", "layers", int), ("tau", "tau", int),
                            ("lda.shrinkage", "lda_shrinkage", float), ("seed", "seed", int),
                            ("knn.k", "knn_k", int)]:
        if key in values:
            kw[name] = conv(values[key])
    if "lda.dim" in values:
        kw["lda_dim"] = None if values["lda.dim"] == "auto" else int(values["lda.dim"])
    if "bandwidth.mode" in values:
        kw["bandwidth"] = values["bandwidth.mode"]
    if "window.mode" in values:
        kw["window_mode"] = values["window.mode"]
    if deltas:
        if sorted(deltas) != list(range(1, len(deltas) + 1)):
            raise DomainError("bandwidth.delta indices must run 1..L without gaps")
        kw["deltas"] = [deltas[i] for i in sorted(deltas)]
    return replace(cfg, **kw)


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def format_config(cfg):
    lines = [
        f"scales = {','.join(str(s) for s in cfg.scales)}",
        f"betas = {','.join(repr(b) for b in cfg.betas)}",
        f"layers = {cfg.layers}",
        f"tau = {cfg.tau}",
        f"bandwidth.mode = {cfg.bandwidth.value}",
    ]
    lines += [f"bandwidth.delta[{i + 1}] = {d!r}" for i, d in enumerate(cfg.deltas)]
    lines += [
        f"lda.shrinkage = {cfg.lda_shrinkage!r}",
        f"lda.dim = {'auto' if cfg.lda_dim is None else cfg.lda_dim}",
        f"knn.k = {cfg.knn_k}",
        f"window.mode = {cfg.window_mode.value}",
        f"seed = {cfg.seed}",
    ]
    return "\n".join(lines) + "\n"


def config_dict(cfg):
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = v.value if isinstance(v, enum.Enum) else (list(v) if isinstance(v, tuple) else v)
    return out
