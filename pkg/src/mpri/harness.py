"""End-to-end experiment runs: split, extract features, classify, score."""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .classify import KnnModel, evaluate, split_train_test
from .pipeline import run_pipeline

# (multi-layer, multi-scale, multi-beta), in reporting order
ABLATION_ROWS = [
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (False, True, True),
    (True, False, True),
    (True, True, False),
    (True, True, True),
]


@dataclass
class ExperimentResult:
    report: object
    predictions: np.ndarray
    features: object
    train: object
    test: object
    timings: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def classify_pixels(features, train, k=1):
    """Fit k-NN on the training pixels and label every pixel of the image."""
    mask = train.flat() > 0
    model = KnnModel(k, features.features[mask], train.flat()[mask])
    return model.predict(features.features).reshape(features.rows, features.cols)


def run_experiment(cube, labels, cfg, fraction, seed, threads=1, cache=None):
    """One randomized run on an already normalised cube."""
    timings = {}
    t0 = time.perf_counter()
    train, test = split_train_test(labels, fraction, seed)
    timings["split"] = time.perf_counter() - t0

    history = []
    t0 = time.perf_counter()
    features = run_pipeline(cube, train, cfg, threads=threads, cache=cache, history=history)
    timings["features"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pred = classify_pixels(features, train, cfg.knn_k)
    timings["classify"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    report = evaluate(pred, test)
    timings["evaluate"] = time.perf_counter() - t0
    return ExperimentResult(report, pred, features, train, test, timings, history)


def raw_spectrum_oa(cube, labels, fraction, seed, k=1):
    """Baseline: k-NN on the (normalised) spectra alone."""
    train, test = split_train_test(labels, fraction, seed)
    mask = train.flat() > 0
    px = cube.pixels()
    model = KnnModel(k, px[mask], train.flat()[mask])
    pred = model.predict(px).reshape(labels.shape)
    return evaluate(pred, test)


def ablation_config(cfg, multi_layer, multi_scale, multi_beta):
    """Switch components off: one layer, the middle width, a single beta.

    The single beta is 3 when the grid contains it, else the middle value.
    """
    changes = {}
    if not multi_layer:
        changes["layers"] = 1
        if len(cfg.deltas) > 1:
            changes["deltas"] = cfg.deltas[:1]
    if not multi_scale:
        changes["scales"] = (cfg.scales[(len(cfg.scales) - 1) // 2],)
    if not multi_beta:
        single = 3.0 if 3.0 in cfg.betas else cfg.betas[(len(cfg.betas) - 1) // 2]
        changes["betas"] = (single,)
    return replace(cfg, **changes)


@dataclass
class AblationRow:
    flags: tuple
    config: object
    reports: list

    @property
    def oa(self):
        return float(np.mean([r.oa for r in self.reports]))

    @property
    def aa(self):
        return float(np.mean([r.aa for r in self.reports]))

    @property
    def kappa(self):
        return float(np.mean([r.kappa for r in self.reports]))


def run_ablation(cube, labels, cfg, seeds, fraction, threads=1, cache=None):
    """All eight on/off combinations, each averaged over ``seeds``."""
    cache = {} if cache is None else cache
    rows = []
    for flags in ABLATION_ROWS:
        row_cfg = ablation_config(cfg, *flags)
        reports = [run_experiment(cube, labels, row_cfg, fraction, s, threads, cache).report
                   for s in seeds]
        rows.append(AblationRow(flags, row_cfg, reports))
    return rows


def format_ablation(rows, seeds):
    mark = {True: "x", False: "-"}
    lines = [f"ablation over seeds {','.join(str(s) for s in seeds)}",
             f"{'multi-layer':>11} {'multi-scale':>11} {'multi-beta':>10} {'OA':>7} {'AA':>7} {'kappa':>7}"]
    for row in rows:
        a, b, c = (mark[f] for f in row.flags)
        lines.append(f"{a:>11} {b:>11} {c:>10} {100 * row.oa:7.2f} {100 * row.aa:7.2f} {row.kappa:7.4f}")
    lines += ["", "[values]", f"rows={len(rows)}"]
    for i, row in enumerate(rows, 1):
        cfg = row.config
        lines.append(f"row[{i}]=layers={cfg.layers};scales={','.join(map(str, cfg.scales))};"
                     f"betas={','.join(repr(b) for b in cfg.betas)}")
        lines.append(f"oa[{i}]={row.oa!r}")
        lines.append(f"aa[{i}]={row.aa!r}")
        lines.append(f"kappa[{i}]={row.kappa!r}")
    return "\n".join(lines) + "\n"
