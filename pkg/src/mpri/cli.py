"""Command-line frontend: ``mpri demo | pipeline | ablate | eval | convert | synth``."""

import argparse
import colorsys
import contextlib
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .classify import EvalReport, evaluate
from .cube import (
    LabelMap,
    load_cube,
    load_cube_csv,
    load_labels,
    load_labels_csv,
    normalize,
    save_cube,
    save_cube_csv,
    save_labels,
    save_labels_csv,
    sniff_kind,
    synth_intersect,
    synth_scene,
)
from .errors import CubeFormatError, DomainError, NumericalError, SolverError
from .harness import ABLATION_ROWS, format_ablation, run_ablation, run_experiment
from .pipeline import PipelineConfig, config_dict, load_config
from .solver import PriConfig, pri_solve

log = logging.getLogger("mpri")

# Points closer than this are counted as one when reporting demo structure.
MERGE_RADIUS = 1e-3


class StageError(Exception):
    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


@contextlib.contextmanager
def stage(name, timings=None):
    t0 = time.perf_counter()
    try:
        yield
    except (DomainError, SolverError, NumericalError, CubeFormatError, OSError, ValueError) as exc:
        raise StageError(name, exc) from exc
    finally:
        if timings is not None:
            timings[name] = time.perf_counter() - t0


def check(cond, what):
    if not cond:
        raise StageError("self-check", what)


@dataclass
class RunManifest:
    """What was run, with what, and where the results went."""

    command: str
    argv: list
    config: dict
    seeds: list
    inputs: dict = field(default_factory=dict)
    stage_seconds: dict = field(default_factory=dict)
    per_pixel_seconds: float = None
    outputs: dict = field(default_factory=dict)
    version: str = __version__

    @property
    def config_hash(self):
        key = {"command": self.command, "config": self.config, "seeds": self.seeds,
               "inputs": self.inputs}
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()

    def write(self, path):
        body = asdict(self)
        body["config_hash"] = self.config_hash
        Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def resolve_threads(value):
    if value is None:
        value = os.environ.get("PRI_THREADS", "1")
    try:
        n = int(value)
    except ValueError:
        raise StageError("arguments", f"thread count must be an integer, got {value!r}") from None
    if n < 1:
        raise StageError("arguments", f"thread count must be positive, got {n}")
    return n


def distinct_points(points, radius=MERGE_RADIUS):
    """Greedy count of clusters whose members lie within ``radius`` of a representative."""
    reps = []
    for p in np.asarray(points):
        if not any(np.linalg.norm(p - r) <= radius for r in reps):
            reps.append(p)
    return len(reps)


def class_palette(n_colors=256):
    """Index 0 is black (unlabeled); class ids get well-spread hues."""
    pal = [0, 0, 0]
    for c in range(1, n_colors):
        h = (c * 0.618033988749895) % 1.0
        s, v = (0.85, 0.95) if c % 2 else (0.6, 0.75)
        pal += [int(round(255 * x)) for x in colorsys.hsv_to_rgb(h, s, v)]
    return pal


def save_label_image(labels, path):
    """Lossless indexed PNG whose pixel values are the class ids."""
    from PIL import Image

    arr = np.asarray(labels)
    if arr.min() < 0 or arr.max() > 255:
        raise DomainError("indexed images hold class ids 0..255 only")
    img = Image.fromarray(arr.astype(np.uint8), mode="P")
    img.putpalette(class_palette())
    img.save(path, format="PNG")


def save_scatter(X, Y, beta, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 4), dpi=100)
    ax.scatter(X[:, 0], X[:, 1], s=4, c="0.7", label="input")
    ax.scatter(Y[:, 0], Y[:, 1], s=6, c="tab:red", label="output")
    ax.set_title(f"beta = {beta:g}")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def _write_points(path, pts):
    np.savetxt(path, pts, delimiter=",", header="x,y", comments="", fmt="%.17g")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seed_list(text):
    """``N`` means seeds 0..N-1; a comma list gives the seeds explicitly."""
    if "," in text:
        return _int_list(text)
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --seeds value {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("seed count must be positive")
    return list(range(n))


# --- commands -------------------------------------------------------------------


def cmd_demo(args):
    out = Path(args.out)
    timings = {}
    with stage("setup", timings):
        out.mkdir(parents=True, exist_ok=True)
        X = synth_intersect(args.n_points, args.noise, args.seed)
        _write_points(out / "input.csv", X)
    manifest = RunManifest(
        "demo", args.argv,
        {"betas": args.beta, "tau": args.tau, "delta": args.delta, "n_points": args.n_points,
         "noise": args.noise},
        [args.seed],
    )
    manifest.outputs["input"] = str(out / "input.csv")
    diameter = max(np.ptp(X, axis=0))
    for beta in args.beta:
        name = f"beta_{beta:g}"
        with stage(f"solve beta={beta:g}", timings):
            Y, trace = pri_solve(X, PriConfig(beta, args.delta, tau=args.tau))
        check(np.all(np.isfinite(Y)), f"non-finite output at beta={beta:g}")
        if beta == 0:
            check(np.all(Y == X.mean(axis=0)), "beta=0 output is not the sample mean")
        with stage(f"write beta={beta:g}", timings):
            _write_points(out / f"{name}.csv", Y)
            manifest.outputs[name] = str(out / f"{name}.csv")
            if not args.no_plot:
                save_scatter(X, Y, beta, out / f"{name}.png")
                manifest.outputs[name + "_plot"] = str(out / f"{name}.png")
        shift = np.linalg.norm(Y - X, axis=1).mean() / diameter
        print(f"beta={beta:g}: {distinct_points(Y)} distinct points, "
              f"mean displacement {shift:.3g} of diameter, {trace.iterations} iterations")
    manifest.stage_seconds = timings
    manifest.write(out / "manifest.json")
    return 0


def _pipeline_config(args):
    cfg = load_config(args.config) if args.config else PipelineConfig()
    kw = {}
    if args.layers is not None:
        kw["layers"] = args.layers
        if len(cfg.deltas) > 1:
            kw["deltas"] = (cfg.deltas + cfg.deltas[-1:] * args.layers)[:args.layers]
    if args.scales is not None:
        kw["scales"] = args.scales
    if args.betas is not None:
        kw["betas"] = args.betas
    if getattr(args, "k", None) is not None:
        kw["knn_k"] = args.k
    if getattr(args, "seed", None) is not None:
        kw["seed"] = args.seed
    return replace(cfg, **kw)


def _load_inputs(args, timings):
    with stage("load cube", timings):
        cube = load_cube(args.cube)
    with stage("load labels", timings):
        labels = load_labels(args.labels)
        labels.check_matches(cube)
    with stage("normalize", timings):
        cube = normalize(cube)
    return cube, labels


def _announce_cost(cfg, cube, labels):
    n_classes = len(labels.classes)
    cost = cfg.cost_estimate(cube.rows, cube.cols, cube.bands, n_classes)
    print(f"estimated kernel evaluations: {cost:.3g} "
          f"({cube.rows}x{cube.cols}x{cube.bands}, {n_classes} classes, "
          f"L={cfg.layers}, S={len(cfg.scales)}, B={len(cfg.betas)}, tau={cfg.tau})",
          file=sys.stderr)
    return cost


def cmd_pipeline(args):
    threads = resolve_threads(args.threads)
    timings = {}
    with stage("config", timings):
        cfg = _pipeline_config(args)
    cube, labels = _load_inputs(args, timings)
    _announce_cost(cfg, cube, labels)

    t0 = time.perf_counter()
    with stage("pipeline", timings):
        result = run_experiment(cube, labels, cfg, args.train_fraction, cfg.seed, threads)
    timings.update({f"pipeline.{k}": v for k, v in result.timings.items()})
    per_pixel = result.timings["features"] / (cube.rows * cube.cols)
    report = result.report

    fm = result.features
    check(fm.dim == sum(r.output.reduced_dim for r in result.history), "feature dimension")
    check(int(report.confusion.sum()) == int((result.test.labels > 0).sum()),
          "confusion total differs from test pixel count")
    check(0.0 <= report.oa <= 1.0, "overall accuracy out of range")

    outputs = {}
    with stage("write outputs", timings):
        save_cube(fm.to_cube(), args.out_features)
        outputs["features"] = args.out_features
        Path(args.out_report).write_text(report.to_text())
        outputs["report"] = args.out_report
        save_label_image(result.predictions, args.out_map)
        outputs["map"] = args.out_map
        if args.out_pred:
            save_labels(LabelMap(result.predictions), args.out_pred)
            outputs["predictions"] = args.out_pred
        if args.out_test:
            save_labels(result.test, args.out_test)
            outputs["test_labels"] = args.out_test

    with stage("self-check"):
        from PIL import Image

        with Image.open(args.out_map) as img:
            check(img.mode == "P", "map image is not indexed")
            check(np.array_equal(np.asarray(img), result.predictions), "map indices differ from predictions")
        check(EvalReport.from_text(Path(args.out_report).read_text()).to_text() == report.to_text(),
              "report does not round-trip")

    print(report.to_text(), end="")
    print(f"time per pixel: {per_pixel:.4g} s (features), total {time.perf_counter() - t0:.3g} s")

    manifest = RunManifest(
        "pipeline", args.argv,
        dict(config_dict(cfg), train_fraction=args.train_fraction),
        [cfg.seed],
        inputs={"cube": file_digest(args.cube), "labels": file_digest(args.labels)},
        stage_seconds=timings, per_pixel_seconds=per_pixel, outputs=outputs,
    )
    manifest.outputs["layers"] = [
        {"delta": r.output.delta, "raw_dim": r.output.raw_dim, "reduced_dim": r.output.reduced_dim,
         "seconds": r.output.seconds} for r in result.history
    ]
    manifest.write(args.manifest or str(args.out_report) + ".manifest.json")
    return 0


def cmd_ablate(args):
    threads = resolve_threads(args.threads)
    timings = {}
    with stage("config", timings):
        cfg = _pipeline_config(args)
    cube, labels = _load_inputs(args, timings)
    _announce_cost(cfg, cube, labels)
    with stage("ablation", timings):
        rows = run_ablation(cube, labels, cfg, args.seeds, args.train_fraction, threads)
    check(len(rows) == len(ABLATION_ROWS), "ablation row count")
    text = format_ablation(rows, args.seeds)
    with stage("write outputs", timings):
        Path(args.out).write_text(text)
    print(text, end="")
    best = max(range(len(rows)), key=lambda i: rows[i].oa)
    print(f"best row: {best + 1} (full configuration is row {len(rows)})")
    RunManifest(
        "ablate", args.argv,
        dict(config_dict(cfg), train_fraction=args.train_fraction,
             rows=[config_dict(r.config) for r in rows]),
        list(args.seeds),
        inputs={"cube": file_digest(args.cube), "labels": file_digest(args.labels)},
        stage_seconds=timings, outputs={"report": args.out},
    ).write(args.manifest or str(args.out) + ".manifest.json")
    return 0


def cmd_eval(args):
    with stage("load predictions"):
        pred = load_labels(args.pred)
    with stage("load truth"):
        truth = load_labels(args.truth)
    with stage("evaluate"):
        report = evaluate(pred, truth)
    text = report.to_text()
    if args.out:
        with stage("write outputs"):
            Path(args.out).write_text(text)
    print(text, end="")
    return 0


def _read_any(path, kind):
    if str(path).lower().endswith(".csv"):
        if kind is None:
            with open(path) as fh:
                kind = "cube" if fh.readline().startswith("row,col") else "labels"
        return kind, (load_cube_csv(path) if kind == "cube" else load_labels_csv(path))
    found = sniff_kind(path)
    if found is None:
        raise CubeFormatError(f"{path}: unrecognised file magic", offset=0)
    return found, (load_cube(path) if found == "cube" else load_labels(path))


def cmd_convert(args):
    with stage("read input"):
        kind, obj = _read_any(args.input, args.kind)
    with stage("write output"):
        to_csv = str(args.output).lower().endswith(".csv")
        if kind == "cube":
            (save_cube_csv if to_csv else save_cube)(obj, args.output)
        else:
            (save_labels_csv if to_csv else save_labels)(obj, args.output)
    print(f"wrote {kind} {'x'.join(map(str, obj.shape))} to {args.output}")
    return 0


def cmd_synth(args):
    with stage("generate"):
        cube, labels = synth_scene(size=args.size, groups=args.groups, per_group=args.per_group,
                                   bands=args.bands, noise_sd=args.noise, seed=args.seed,
                                   layout_seed=args.layout_seed)
    with stage("write outputs"):
        save_cube(cube, args.out_cube)
        save_labels(labels, args.out_labels)
    print(f"wrote {'x'.join(map(str, cube.shape))} cube with {len(labels.classes)} classes")
    return 0


# --- argument parsing ------------------------------------------------------------------


def _add_pipeline_options(p):
    p.add_argument("--cube", required=True, help="input cube file")
    p.add_argument("--labels", required=True, help="ground-truth label file")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--train-fraction", type=float, default=0.02,
                   help="per-class training fraction (default 0.02)")
    p.add_argument("--layers", type=int, help="override the number of layers")
    p.add_argument("--scales", type=_int_list, help="override window widths, e.g. 3,5,7")
    p.add_argument("--betas", type=_float_list, help="override betas, e.g. 2,3,4")
    p.add_argument("--threads", help="worker threads (default: $PRI_THREADS or 1)")
    p.add_argument("--manifest", help="manifest path (default: next to the report)")


def build_parser():
    parser = argparse.ArgumentParser(prog="mpri", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo", help="relevant-information solutions on the intersect cloud")
    p.add_argument("--beta", type=float, nargs="+", default=[0.0, 1.0, 3.0, 100.0])
    p.add_argument("--tau", type=int, default=50)
    p.add_argument("--delta", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-points", type=int, default=500)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--no-plot", action="store_true", help="skip PNG scatter plots")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("pipeline", help="split, extract features, classify and score")
    _add_pipeline_options(p)
    p.add_argument("--seed", type=int, help="split seed (default: config seed)")
    p.add_argument("--k", type=int, help="neighbours for k-NN (default: config)")
    p.add_argument("--out-features", required=True)
    p.add_argument("--out-map", required=True, help="indexed PNG classification map")
    p.add_argument("--out-report", required=True)
    p.add_argument("--out-pred", help="predicted label map (label file format)")
    p.add_argument("--out-test", help="test-pixel ground truth used for scoring")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("ablate", help="on/off grid over layers, scales and betas")
    _add_pipeline_options(p)
    p.add_argument("--seeds", type=_seed_list, default=list(range(5)),
                   help="N for seeds 0..N-1, or a comma list (default 5)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("eval", help="score stored predictions")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("convert", help="convert cubes and label maps between binary and CSV")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--kind", choices=["cube", "labels"], help="CSV input kind (default: sniff)")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="write a synthetic labeled scene")
    p.add_argument("--out-cube", required=True)
    p.add_argument("--out-labels", required=True)
    p.add_argument("--size", type=int, default=24)
    p.add_argument("--bands", type=int, default=10)
    p.add_argument("--groups", type=int, default=2)
    p.add_argument("--per-group", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layout-seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"mpri {args.command}: error in {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
