"""Experiment orchestration: config parsing, the train/oracle-verify/
adversarial/report subcommands, metrics CSV emission, and PGM image dumps.

Run directories are reproducible: metrics.csv is bitwise-identical across
reruns of the same config and seed. Wall-clock timings therefore live in a
separate timing.csv; the wall_time column of metrics.csv stays empty.
"""

import argparse
import configparser
import csv
import hashlib
import sys
import time
import traceback
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import data as D
from . import network as N
from . import oracle as O
from . import robustness as R
from . import sampler as S
from . import tensor as T
from . import trainer as TR
from .seeding import STREAM_DATA, STREAM_ORACLE, rng

TASKS = ("synthetic2d", "mnist-subset", "mnist-full")
MODES = ("binary", "one-vs-all", "softmax", "icn-noise", "baseline")

METRICS_HEADER = ("round", "train_loss", "val_error", "test_error",
                  "store_size", "kl_to_positive", "wall_time")


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# network specs per task
# ---------------------------------------------------------------------------

SYNTH_NET = [T.dense(2, 16), T.leaky(), T.dense(16, 16), T.leaky()]

MNIST_NET = [T.conv(1, 64), T.leaky(), T.conv(64, 128), T.leaky(),
             T.conv(128, 256), T.leaky(), T.conv(256, 512), T.leaky(),
             T.flatten()]


def network_spec_for(task):
    return SYNTH_NET if task == "synthetic2d" else MNIST_NET


# ---------------------------------------------------------------------------
# experiment config
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    mode: str
    out: str
    seed: int = 0
    n_positive: int = 40
    n_negative: int = 12
    test_positive: int = 400
    test_negative: int = 400
    subset_size: int = 500
    test_subset: int = 2000
    mnist_dir: str = ""
    grid_resolution: int = 128
    train: TR.TrainConfig = None
    sampler: S.SamplerConfig = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise CliError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.mode not in MODES:
            raise CliError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.task != "synthetic2d" and self.mode == "binary":
            raise CliError("binary mode applies to the synthetic2d task only")


_EXPERIMENT_CASTS = {
    "task": str, "mode": str, "out": str, "seed": int,
    "n_positive": int, "n_negative": int,
    "test_positive": int, "test_negative": int,
    "subset_size": int, "test_subset": int,
    "mnist_dir": str, "grid_resolution": int,
}

_TRAIN_CASTS = {
    "rounds": int, "pseudo_per_round": int, "epochs_per_round": int,
    "init_epochs": int, "batch_size": int, "learning_rate": float,
    "lr_drop_round": int, "momentum": float, "alpha": float,
    "val_fraction": float, "patience": int,
    "reinit_each_round": lambda s: s.strip().lower() in ("1", "true", "yes"),
}

_SAMPLER_CASTS = {
    "method": str, "stopping": str, "step_size": float, "anneal": float,
    "max_steps": int, "confidence_threshold": float, "fixed_steps": int,
    "reference_sigma": float,
    "noise": lambda s: s.strip().lower() in ("1", "true", "yes"),
}


def _cast_section(cp, section, casts, target):
    if not cp.has_section(section):
        return target
    updates = {}
    for key, raw in cp.items(section):
        if key not in casts:
            raise CliError(f"unknown key {key!r} in section [{section}]")
        try:
            updates[key] = casts[key](raw)
        except ValueError as exc:
            raise CliError(f"bad value for {section}.{key}: {raw!r}") from exc
    return replace(target, **updates) if updates else target


def parse_config(path, seed_override=None, out_override=None):
    """Parse the line-oriented `key = value` config with [experiment],
    [train], and [sampler] sections into an ExperimentConfig."""
    path = Path(path)
    if not path.is_file():
        raise CliError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(path.read_text())
    except configparser.Error as exc:
        raise CliError(f"config parse error in {path}: {exc}") from exc
    for section in cp.sections():
        if section not in ("experiment", "train", "sampler"):
            raise CliError(f"unknown section [{section}]")
    if not cp.has_section("experiment"):
        raise CliError("config must have an [experiment] section")
    exp = {}
    for key, raw in cp.items("experiment"):
        if key not in _EXPERIMENT_CASTS:
            raise CliError(f"unknown key {key!r} in section [experiment]")
        try:
            exp[key] = _EXPERIMENT_CASTS[key](raw)
        except ValueError as exc:
            raise CliError(f"bad value for experiment.{key}: {raw!r}") from exc
    for required in ("task", "mode", "out"):
        if required not in exp:
            raise CliError(f"experiment.{required} is required")
    if seed_override is not None:
        exp["seed"] = seed_override
    if out_override is not None:
        exp["out"] = out_override

    batch_default = 32 if exp.get("task") == "synthetic2d" else 64
    train = TR.TrainConfig(batch_size=batch_default,
                           keep_round_snapshots=True)
    train = _cast_section(cp, "train", _TRAIN_CASTS, train)
    sampler = _cast_section(cp, "sampler", _SAMPLER_CASTS, S.SamplerConfig())
    train = replace(train, seed=exp.get("seed", 0), keep_round_snapshots=True)
    if exp.get("task") != "synthetic2d":
        # synthesized pixels must stay inside the normalized image range
        sampler = replace(sampler, clamp=(-1.0, 1.0))
    return ExperimentConfig(train=train, sampler=sampler, **exp)


def config_snapshot_text(config):
    """Normalized, fully explicit config rendering; stable across reruns."""
    lines = ["[experiment]"]
    for key in _EXPERIMENT_CASTS:
        lines.append(f"{key} = {getattr(config, key)}")
    lines.append("")
    lines.append("[train]")
    for key in _TRAIN_CASTS:
        lines.append(f"{key} = {getattr(config.train, key)}")
    lines.append("")
    lines.append("[sampler]")
    for key in _SAMPLER_CASTS:
        lines.append(f"{key} = {getattr(config.sampler, key)}")
    lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# metrics CSV
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsRow:
    round: int
    train_loss: float = None
    val_error: float = None
    test_error: float = None
    store_size: int = 0
    kl_to_positive: float = None
    wall_time: float = None


def format_float(x):
    """Nine significant digits; empty cell for missing values."""
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    return "%.9g" % x


def emit_metrics(rows, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\r\n")
        writer.writerow(METRICS_HEADER)
        for r in rows:
            writer.writerow([
                str(r.round), format_float(r.train_loss),
                format_float(r.val_error), format_float(r.test_error),
                str(r.store_size), format_float(r.kl_to_positive),
                format_float(r.wall_time),
            ])


def parse_metrics(path):
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise CliError(f"{path}: empty metrics file") from None
        if header != METRICS_HEADER:
            raise CliError(f"{path}: unexpected header {header}")
        rows = []
        for cells in reader:
            if len(cells) != len(METRICS_HEADER):
                raise CliError(f"{path}: bad row {cells}")
            fv = lambda s: None if s == "" else float(s)
            rows.append(MetricsRow(
                round=int(cells[0]), train_loss=fv(cells[1]),
                val_error=fv(cells[2]), test_error=fv(cells[3]),
                store_size=int(cells[4]), kl_to_positive=fv(cells[5]),
                wall_time=fv(cells[6])))
    return rows


# ---------------------------------------------------------------------------
# PGM image dumps
# ---------------------------------------------------------------------------

def write_pgm(gray, path):
    """Binary PGM (P5), maxval 255."""
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise CliError("write_pgm expects a 2-D uint8 array")
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    if not data.startswith(b"P5\n"):
        raise CliError(f"{path}: not a raw PGM file")
    rest = data[3:]
    dims, rest = rest.split(b"\n", 1)
    maxval, payload = rest.split(b"\n", 1)
    w, h = (int(tok) for tok in dims.split())
    if maxval != b"255":
        raise CliError(f"{path}: unsupported maxval {maxval!r}")
    if len(payload) != w * h:
        raise CliError(f"{path}: truncated pixel payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w)


def dump_images(samples, path, inverse_normalization=None):
    """Tile samples into a grayscale grid and write it as binary PGM.

    Values are inverse-normalized to [0, 255], clamped, and rounded half-up
    (so a normalized all-zero image lands on 128).
    """
    try:
        arr = np.stack([np.asarray(s, dtype=np.float64) for s in samples])
    except ValueError as exc:
        raise CliError(f"samples must share one shape: {exc}") from exc
    if arr.ndim == 4 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 3:
        raise CliError(f"expected image-shaped samples, got shape {arr.shape}")
    if inverse_normalization is None:
        inverse_normalization = lambda v: (v + 1.0) * 127.5
    vals = np.clip(inverse_normalization(arr), 0.0, 255.0)
    pixels = np.clip(np.floor(vals + 0.5), 0, 255).astype(np.uint8)
    n, h, w = pixels.shape
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    canvas = np.zeros((rows * h, cols * w), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[r * h:(r + 1) * h, c * w:(c + 1) * w] = pixels[i]
    write_pgm(canvas, path)


# ---------------------------------------------------------------------------
# run directory artifacts
# ---------------------------------------------------------------------------

def _sha256(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def write_manifest(out_dir, config, input_files):
    lines = [f"seed = {config.seed}"]
    snapshot = (out_dir / "config.ini").read_bytes()
    lines.append(f"sha256 {_sha256(snapshot)}  config.ini")
    for p in input_files:
        p = Path(p)
        lines.append(f"sha256 {_sha256(p.read_bytes())}  {p.name}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _store_upto(store, round_t):
    """New store holding the entries of rounds <= round_t, original order."""
    upto = D.PseudoNegativeStore()
    i = 0
    entries = store.entries
    while i < len(entries):
        e = entries[i]
        j = i
        while (j < len(entries) and entries[j].round == e.round
               and entries[j].class_tag == e.class_tag):
            j += 1
        if e.round <= round_t:
            upto.add_batch(e.round, e.class_tag,
                           np.stack([x.sample for x in entries[i:j]]))
        i = j
    return upto


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------

def _load_task_data(config):
    """Returns (train_ds, test_ds, p_plus_density_or_None, input_files)."""
    if config.task == "synthetic2d":
        spec = D.default_benchmark_spec(config.n_positive, config.n_negative)
        train_ds, p_plus = D.gen_synthetic_2d(spec, rng(config.seed, STREAM_DATA))
        test_spec = D.default_benchmark_spec(config.test_positive,
                                             config.test_negative)
        test_ds, _ = D.gen_synthetic_2d(test_spec, rng(config.seed, STREAM_DATA, 1))
        return train_ds, test_ds, p_plus, []
    root = Path(config.mnist_dir) if config.mnist_dir else D.default_mnist_dir()
    train_full, test_full = D.load_mnist(root)
    input_files = [D.find_mnist_file(root, key) for key in D.MNIST_STEMS]
    train_full = D.normalize(train_full)
    test_full = D.normalize(test_full)
    if config.task == "mnist-subset":
        train_ds = D.stratified_subset(train_full, config.subset_size,
                                       config.seed)
        test_ds = (D.stratified_subset(test_full, config.test_subset,
                                       config.seed)
                   if config.test_subset else test_full)
    else:
        train_ds, test_ds = train_full, test_full
    return train_ds, test_ds, None, input_files


def _binary_view(ds):
    """Map {0,1} class labels onto the {-1,+1} convention if needed."""
    if set(np.unique(ds.labels)) <= {-1, 1}:
        return ds
    return D.LabeledDataset(ds.samples, np.where(ds.labels == 1, 1, -1), 2)


def _run_training(config, train_ds):
    net = network_spec_for(config.task)
    tcfg = config.train
    scfg = config.sampler
    inner_mode = "binary" if config.task == "synthetic2d" else "multiclass"
    if config.mode == "baseline":
        ds = _binary_view(train_ds) if inner_mode == "binary" else train_ds
        return TR.baseline_train(ds, net, tcfg, inner_mode), inner_mode
    if config.mode == "binary":
        return (TR.run_reclassification_by_synthesis(
            _binary_view(train_ds), net, tcfg, scfg, "binary"), "binary")
    if config.mode == "icn-noise":
        ds = _binary_view(train_ds) if inner_mode == "binary" else train_ds
        return (TR.train_icn_noise_ablation(ds, net, tcfg, scfg, inner_mode),
                inner_mode)
    if config.mode == "softmax":
        ds = train_ds
        if config.task == "synthetic2d":
            ds = D.LabeledDataset(ds.samples,
                                  np.where(ds.labels == 1, 1, 0).astype(np.int64),
                                  2)
        return (TR.run_reclassification_by_synthesis(ds, net, tcfg, scfg,
                                                     "multiclass"), "multiclass")
    # one-vs-all
    ds = train_ds
    if config.task == "synthetic2d":
        ds = D.LabeledDataset(ds.samples,
                              np.where(ds.labels == 1, 1, 0).astype(np.int64), 2)
    return TR.train_one_vs_all_ensemble(ds, net, tcfg, scfg), "one-vs-all"


def _test_error(model, test_ds, inner_mode):
    if inner_mode == "binary":
        view = _binary_view(test_ds)
        return TR.binary_error(model, view.samples, view.labels)
    return TR.multiclass_error(model, test_ds.samples, test_ds.labels)


def _synthetic_grids(config):
    prior = O.reference_grid(config.sampler.reference_sigma,
                             resolution=(config.grid_resolution,
                                         config.grid_resolution))
    return prior


def _positive_grid(p_plus, config):
    res = (config.grid_resolution, config.grid_resolution)
    return O.build_grid(O.DEFAULT_BOUNDS, res, p_plus.pdf,
                        log_density_fn=p_plus.log_pdf)


def _run_experiment_inner(config, out_dir):
    timings = [("setup", time.perf_counter())]
    train_ds, test_ds, p_plus, input_files = _load_task_data(config)
    write_manifest(out_dir, config, input_files)

    timings.append(("train", time.perf_counter()))
    result, inner_mode = _run_training(config, train_ds)

    timings.append(("evaluate", time.perf_counter()))
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)

    synthetic_binary = config.task == "synthetic2d" and inner_mode == "binary"
    if synthetic_binary:
        prior = _synthetic_grids(config)
        pos_grid = _positive_grid(p_plus, config)
        heat_dir = out_dir / "heatmaps"
        heat_dir.mkdir(exist_ok=True)
    image_task = config.task != "synthetic2d"
    if image_task:
        img_dir = out_dir / "images"
        img_dir.mkdir(exist_ok=True)

    rows = []
    if isinstance(result, TR.OneVsAllResult):
        store = result.store
        n_rounds = min(len(mr.metrics) for mr in result.member_results)
        member_protos = [mr.classifier for mr in result.member_results]
        for t in range(n_rounds):
            members = [TR.with_params(proto, mr.snapshots[t])
                       for proto, mr in zip(member_protos, result.member_results)]
            model_t = N.OneVsAllEnsemble(members)
            per = [mr.metrics[t] for mr in result.member_results]
            store_t = sum(m.store_size for m in per)
            rows.append(MetricsRow(
                round=t,
                train_loss=float(np.mean([m.train_loss for m in per])),
                val_error=float(np.mean([m.val_error for m in per])),
                test_error=_test_error(model_t, test_ds, "multiclass"),
                store_size=store_t))
            N.save_model(ckpt_dir / f"model_round_{t:02d}.bin", model_t)
            D.save_store(_store_upto(store, t),
                         ckpt_dir / f"store_round_{t:02d}.bin")
            if image_task and t >= 1:
                round_samples = [e.sample for e in store.entries if e.round == t]
                dump_images(round_samples[:64],
                            img_dir / f"pseudo_round_{t:02d}.pgm",
                            lambda v: D.denormalize(v))
        final_model = result.ensemble
    else:
        store = result.store
        for m in result.metrics:
            model_t = TR.with_params(result.classifier, result.snapshots[m.round])
            kl = None
            if synthetic_binary:
                p_t, _ = O.density_update(prior, model_t)
                kl = O.kl_divergence(pos_grid, p_t)
                if m.round >= 1:
                    write_pgm(O.heatmap_gray(p_t),
                              heat_dir / f"heatmap_round_{m.round:02d}.pgm")
            rows.append(MetricsRow(
                round=m.round, train_loss=m.train_loss, val_error=m.val_error,
                test_error=_test_error(model_t, test_ds, inner_mode),
                store_size=m.store_size, kl_to_positive=kl))
            N.save_model(ckpt_dir / f"model_round_{m.round:02d}.bin", model_t)
            D.save_store(_store_upto(store, m.round),
                         ckpt_dir / f"store_round_{m.round:02d}.bin")
            if image_task and m.round >= 1:
                round_samples = [e.sample for e in store.entries
                                 if e.round == m.round]
                dump_images(round_samples[:64],
                            img_dir / f"pseudo_round_{m.round:02d}.pgm",
                            lambda v: D.denormalize(v))
        final_model = result.selected

    timings.append(("artifacts", time.perf_counter()))
    N.save_model(out_dir / "model_final.bin", final_model)
    D.save_store(store, out_dir / "store_final.bin")
    emit_metrics(rows, out_dir / "metrics.csv")

    timings.append(("done", time.perf_counter()))
    with open(out_dir / "timing.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\r\n")
        writer.writerow(("phase", "seconds"))
        for (name, start), (_, end) in zip(timings, timings[1:]):
            writer.writerow((name, "%.3f" % (end - start)))
    return 0


def run_experiment(config):
    """Run one experiment; returns a process exit status. A mid-run failure
    leaves partial artifacts plus an error.txt record behind."""
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(config_snapshot_text(config))
    try:
        return _run_experiment_inner(config, out_dir)
    except Exception as exc:
        (out_dir / "error.txt").write_text(
            f"{type(exc).__name__}: {exc}\n\n{traceback.format_exc()}")
        print(f"error: {exc}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args):
    config = parse_config(args.config, seed_override=args.seed,
                          out_override=args.out)
    return run_experiment(config)


def cmd_oracle_verify(args):
    """Check the round-ratio identity for random classifier pairs on the
    exact grid; the gap must sit at numerical-noise level."""
    res = (args.resolution, args.resolution)
    prior = O.reference_grid(resolution=res)
    p_plus_density = D.MixtureDensity(
        D.default_benchmark_spec().positive_means,
        D.default_benchmark_spec().positive_covs, (1, 1))
    p_plus = O.build_grid(O.DEFAULT_BOUNDS, res, p_plus_density.pdf,
                          log_density_fn=p_plus_density.log_pdf)
    gaps = []
    for i in range(args.pairs):
        c_t = N.init_binary(SYNTH_NET, (2,), rng(args.seed, STREAM_ORACLE, i, 0))
        c_next = N.init_binary(SYNTH_NET, (2,), rng(args.seed, STREAM_ORACLE, i, 1))
        left, right = O.update_identity_sides(p_plus, prior, c_t, c_next)
        gaps.append(abs(left - right))
    worst = max(gaps)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "oracle_verify.csv", "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\r\n")
            writer.writerow(("pair", "identity_gap"))
            for i, gap in enumerate(gaps):
                writer.writerow((i, "%.9g" % gap))
    ok = worst < args.tolerance
    print(f"oracle-verify: {args.pairs} pairs on a {args.resolution}x"
          f"{args.resolution} grid, max identity gap {worst:.3e} "
          f"(tolerance {args.tolerance:g}) -> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_adversarial(args):
    model_a = N.load_model(args.model_a)
    model_b = N.load_model(args.model_b)
    config = parse_config(args.config)
    _, test_ds, _, _ = _load_task_data(config)
    if isinstance(model_a, N.BinaryClassifier):
        test_ds = _binary_view(test_ds)
    ab, ba = R.two_way_fool_experiment(model_a, model_b, test_ds, args.eps)
    path_a, path_b = Path(args.model_a), Path(args.model_b)
    name_a, name_b = path_a.stem, path_b.stem
    if name_a == name_b:
        # run directories disambiguate the usual model_final.bin pairs
        name_a = f"{path_a.parent.name}/{name_a}"
        name_b = f"{path_b.parent.name}/{name_b}"
    text = R.summarize_two_way(ab, ba, name_a, name_b)
    print(text)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "fooling.csv", "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\r\n")
            writer.writerow(("direction", "eligible", "adversarial",
                             "cross_fool", "epsilon"))
            writer.writerow(("a_to_b", ab.eligible_count, ab.adversarial_count,
                             ab.cross_fool_count, "%.9g" % ab.epsilon))
            writer.writerow(("b_to_a", ba.eligible_count, ba.adversarial_count,
                             ba.cross_fool_count, "%.9g" % ba.epsilon))
        (out_dir / "fooling_summary.txt").write_text(text + "\n")
    return 0


def cmd_report(args):
    run_dir = Path(args.run)
    metrics_path = run_dir / "metrics.csv"
    if not metrics_path.is_file():
        raise CliError(f"no metrics.csv under {run_dir}")
    rows = parse_metrics(metrics_path)
    cells = lambda r: (str(r.round), format_float(r.train_loss),
                       format_float(r.val_error), format_float(r.test_error),
                       str(r.store_size), format_float(r.kl_to_positive))
    header = METRICS_HEADER[:6]
    table = [header] + [cells(r) for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    for row in table:
        print("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
    fooling = run_dir / "fooling_summary.txt"
    if fooling.is_file():
        print()
        print(fooling.read_text().rstrip())
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="icnet",
        description="Introspective convolutional net experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training experiment")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
    p_train.add_argument("--out", default=None,
                         help="override the config output directory")
    p_train.set_defaults(fn=cmd_train)

    p_oracle = sub.add_parser("oracle-verify",
                              help="check the grid-density update identity")
    p_oracle.add_argument("--pairs", type=int, default=20)
    p_oracle.add_argument("--resolution", type=int, default=128)
    p_oracle.add_argument("--seed", type=int, default=0)
    p_oracle.add_argument("--tolerance", type=float, default=1e-9)
    p_oracle.add_argument("--out", default=None)
    p_oracle.set_defaults(fn=cmd_oracle_verify)

    p_adv = sub.add_parser("adversarial",
                           help="two-way cross-model fooling experiment")
    p_adv.add_argument("--model-a", required=True)
    p_adv.add_argument("--model-b", required=True)
    p_adv.add_argument("--config", required=True,
                       help="experiment config naming the task/test set")
    p_adv.add_argument("--eps", type=float, default=R.DEFAULT_EPSILON)
    p_adv.add_argument("--out", default=None)
    p_adv.set_defaults(fn=cmd_adversarial)

    p_report = sub.add_parser("report", help="print a run's metrics table")
    p_report.add_argument("--run", required=True)
    p_report.set_defaults(fn=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, D.DataError, N.ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
