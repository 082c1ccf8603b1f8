"""Config grammar, CSV/PGM format contracts, and end-to-end run artifacts."""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from icnet import cli as C
from icnet import data as D
from icnet import network as N


def config_text(out, task="synthetic2d", mode="binary", seed=0, rounds=3,
                pseudo=4, extra_experiment="", extra_train=""):
    return f"""\
[experiment]
task = {task}
mode = {mode}
out = {out}
seed = {seed}
n_positive = 16
n_negative = 12
test_positive = 40
test_negative = 40
grid_resolution = 48
{extra_experiment}

[train]
rounds = {rounds}
pseudo_per_round = {pseudo}
init_epochs = 6
epochs_per_round = 2
val_fraction = 0.25
patience = 99
{extra_train}

[sampler]
stopping = option3
fixed_steps = 5
max_steps = 10
"""


def write_config(tmp_path, name="exp.ini", **kw):
    out = kw.pop("out", str(tmp_path / "run"))
    path = tmp_path / name
    path.write_text(config_text(out, **kw))
    return path


class TestMetricsCsv:
    def test_empty_rows_header_only(self, tmp_path):
        path = tmp_path / "metrics.csv"
        C.emit_metrics([], path)
        content = path.read_bytes()
        assert content == (",".join(C.METRICS_HEADER) + "\r\n").encode()

    def test_column_order_fixed(self):
        assert C.METRICS_HEADER == ("round", "train_loss", "val_error",
                                    "test_error", "store_size",
                                    "kl_to_positive", "wall_time")

    def test_nine_significant_digits(self):
        assert C.format_float(3.141592653589793) == "3.14159265"
        assert C.format_float(1.0 / 3.0) == "0.333333333"
        assert C.format_float(None) == ""
        assert C.format_float(float("nan")) == ""

    def test_roundtrip_is_bitwise_idempotent(self, tmp_path):
        rows = [
            C.MetricsRow(0, train_loss=1.0 / 3.0, val_error=0.25,
                         test_error=None, store_size=0,
                         kl_to_positive=2.718281828459045),
            C.MetricsRow(1, train_loss=None, val_error=None,
                         test_error=0.0625, store_size=50,
                         kl_to_positive=None),
        ]
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        C.emit_metrics(rows, p1)
        C.emit_metrics(C.parse_metrics(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_parse_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,y\r\n1,2\r\n")
        with pytest.raises(C.CliError, match="header"):
            C.parse_metrics(path)


class TestPgm:
    def test_header_format_exact(self, tmp_path):
        path = tmp_path / "t.pgm"
        C.write_pgm(np.arange(6, dtype=np.uint8).reshape(2, 3), path)
        data = path.read_bytes()
        assert data.startswith(b"P5\n3 2\n255\n")
        assert data[len(b"P5\n3 2\n255\n"):] == bytes(range(6))

    def test_all_zero_sample_is_mid_gray_128(self, tmp_path):
        path = tmp_path / "zero.pgm"
        C.dump_images(np.zeros((1, 4, 4)), path)
        img = C.read_pgm(path)
        assert img.shape == (4, 4)
        assert np.all(img == 128)

    def test_roundtrip_with_independent_reader(self, tmp_path):
        gen = np.random.default_rng(7)
        samples = gen.uniform(-1, 1, size=(5, 4, 4))
        path = tmp_path / "grid.pgm"
        C.dump_images(samples, path)
        # independent parse: split the three header fields by hand
        raw = path.read_bytes()
        magic, dims, maxval, payload = raw.split(b"\n", 3)
        assert magic == b"P5" and maxval == b"255"
        w, h = map(int, dims.split())
        got = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
        # recompute expected bytes: clamp, round half up, 3x2 grid of 4x4
        vals = np.clip((samples + 1.0) * 127.5, 0, 255)
        pix = np.clip(np.floor(vals + 0.5), 0, 255).astype(np.uint8)
        assert (h, w) == (2 * 4, 3 * 4)
        for i in range(5):
            r, c = divmod(i, 3)
            tile = got[r * 4:(r + 1) * 4, c * 4:(c + 1) * 4]
            assert np.array_equal(tile, pix[i])
        assert np.all(got[4:8, 8:12] == 0)  # unfilled cell stays black

    def test_mixed_shapes_rejected(self, tmp_path):
        with pytest.raises(C.CliError, match="share one shape"):
            C.dump_images([np.zeros((4, 4)), np.zeros((3, 3))],
                          tmp_path / "bad.pgm")

    def test_non_image_shape_rejected(self, tmp_path):
        with pytest.raises(C.CliError, match="image-shaped"):
            C.dump_images(np.zeros((5, 2)), tmp_path / "bad.pgm")


class TestParseConfig:
    def test_minimal_config_and_defaults(self, tmp_path):
        path = write_config(tmp_path)
        cfg = C.parse_config(path)
        assert cfg.task == "synthetic2d" and cfg.mode == "binary"
        assert cfg.train.rounds == 3
        assert cfg.train.batch_size == 32  # synthetic2d default
        assert cfg.train.seed == cfg.seed == 0
        assert cfg.train.keep_round_snapshots is True
        assert cfg.sampler.stopping == "option3"

    def test_seed_and_out_overrides(self, tmp_path):
        path = write_config(tmp_path)
        cfg = C.parse_config(path, seed_override=9,
                             out_override=str(tmp_path / "other"))
        assert cfg.seed == 9 and cfg.train.seed == 9
        assert cfg.out.endswith("other")

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, extra_experiment="bogus = 1")
        with pytest.raises(C.CliError, match="bogus"):
            C.parse_config(path)

    def test_train_seed_key_rejected(self, tmp_path):
        path = write_config(tmp_path, extra_train="seed = 3")
        with pytest.raises(C.CliError, match="seed"):
            C.parse_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text(config_text(str(tmp_path / "r")) + "\n[mystery]\nk = v\n")
        with pytest.raises(C.CliError, match="mystery"):
            C.parse_config(path)

    def test_bad_value_rejected(self, tmp_path):
        path = write_config(tmp_path, rounds="many")
        with pytest.raises(C.CliError, match="rounds"):
            C.parse_config(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(C.CliError, match="not found"):
            C.parse_config(tmp_path / "nope.ini")

    def test_binary_mode_requires_synthetic_task(self, tmp_path):
        path = write_config(tmp_path, task="mnist-subset", mode="binary",
                            extra_experiment=f"mnist_dir = {tmp_path}")
        with pytest.raises(C.CliError, match="binary"):
            C.parse_config(path)

    def test_mnist_task_gets_pixel_clamp(self, tmp_path):
        path = write_config(tmp_path, task="mnist-subset", mode="softmax",
                            extra_experiment=f"mnist_dir = {tmp_path}")
        cfg = C.parse_config(path)
        assert cfg.sampler.clamp == (-1.0, 1.0)
        assert cfg.train.batch_size == 64

    def test_snapshot_text_stable(self, tmp_path):
        path = write_config(tmp_path)
        a = C.config_snapshot_text(C.parse_config(path))
        b = C.config_snapshot_text(C.parse_config(path))
        assert a == b and "[experiment]" in a


class TestRunExperiment:
    def test_baseline_has_exactly_one_row(self, tmp_path):
        out = tmp_path / "run"
        cfg = C.parse_config(write_config(tmp_path, mode="baseline"))
        assert C.run_experiment(cfg) == 0
        rows = C.parse_metrics(out / "metrics.csv")
        assert len(rows) == 1 and rows[0].round == 0
        assert rows[0].store_size == 0
        assert rows[0].kl_to_positive is not None  # synthetic task fills KL
        assert rows[0].wall_time is None  # timings live in timing.csv
        assert (out / "model_final.bin").is_file()
        assert (out / "timing.csv").is_file()
        assert not list((out / "heatmaps").glob("*.pgm"))

    def test_icn_run_artifacts_and_counts(self, tmp_path):
        out = tmp_path / "run"
        cfg = C.parse_config(write_config(tmp_path, rounds=3, pseudo=4))
        assert C.run_experiment(cfg) == 0
        rows = C.parse_metrics(out / "metrics.csv")
        assert len(rows) == 4
        assert [r.store_size for r in rows] == [0, 4, 8, 12]
        heatmaps = sorted((out / "heatmaps").glob("heatmap_round_*.pgm"))
        assert [p.name for p in heatmaps] == [
            "heatmap_round_01.pgm", "heatmap_round_02.pgm",
            "heatmap_round_03.pgm"]
        img = C.read_pgm(heatmaps[0])
        assert img.shape == (48, 48) and img.max() == 255
        for t in range(4):
            assert (out / "checkpoints" / f"model_round_{t:02d}.bin").is_file()
            store_t = D.load_store(out / "checkpoints" / f"store_round_{t:02d}.bin")
            assert len(store_t) == 4 * t
        model = N.load_model(out / "model_final.bin")
        assert isinstance(model, N.BinaryClassifier)
        final_store = D.load_store(out / "store_final.bin")
        assert len(final_store) == 12

    def test_manifest_hash_matches_config(self, tmp_path):
        out = tmp_path / "run"
        cfg = C.parse_config(write_config(tmp_path, mode="baseline"))
        C.run_experiment(cfg)
        manifest = (out / "manifest.txt").read_text().splitlines()
        assert manifest[0] == "seed = 0"
        digest = hashlib.sha256((out / "config.ini").read_bytes()).hexdigest()
        assert manifest[1] == f"sha256 {digest}  config.ini"

    def test_rerun_bitwise_identical_metrics(self, tmp_path):
        cfg_a = C.parse_config(write_config(tmp_path),
                               out_override=str(tmp_path / "a"))
        cfg_b = C.parse_config(write_config(tmp_path),
                               out_override=str(tmp_path / "b"))
        assert C.run_experiment(cfg_a) == 0
        assert C.run_experiment(cfg_b) == 0
        a, b = tmp_path / "a", tmp_path / "b"
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
        assert (a / "model_final.bin").read_bytes() == (b / "model_final.bin").read_bytes()
        assert (a / "store_final.bin").read_bytes() == (b / "store_final.bin").read_bytes()

    def test_midrun_failure_leaves_error_record(self, tmp_path):
        empty = tmp_path / "nodata"
        empty.mkdir()
        path = write_config(tmp_path, task="mnist-subset", mode="softmax",
                            extra_experiment=f"mnist_dir = {empty}")
        cfg = C.parse_config(path)
        out = Path(cfg.out)
        assert C.run_experiment(cfg) == 1
        assert (out / "error.txt").read_text().startswith("DataError")
        assert (out / "config.ini").is_file()  # partial artifacts remain

    def test_softmax_mode_on_synthetic(self, tmp_path):
        out = tmp_path / "run"
        cfg = C.parse_config(write_config(tmp_path, mode="softmax", rounds=1))
        assert C.run_experiment(cfg) == 0
        rows = C.parse_metrics(out / "metrics.csv")
        assert len(rows) == 2
        assert rows[1].store_size == 2 * 4  # K=2 classes, l=4
        assert rows[0].kl_to_positive is None  # KL tracks binary runs only
        model = N.load_model(out / "model_final.bin")
        assert isinstance(model, N.MulticlassClassifier)

    def test_one_vs_all_mode_on_synthetic(self, tmp_path):
        out = tmp_path / "run"
        cfg = C.parse_config(write_config(tmp_path, mode="one-vs-all",
                                          rounds=1))
        assert C.run_experiment(cfg) == 0
        rows = C.parse_metrics(out / "metrics.csv")
        assert len(rows) == 2
        assert rows[1].store_size == 2 * 4
        model = N.load_model(out / "model_final.bin")
        assert isinstance(model, N.OneVsAllEnsemble)


class TestSubcommands:
    def test_unknown_command_exits_2(self):
        with pytest.raises(SystemExit) as err:
            C.main(["frobnicate"])
        assert err.value.code == 2

    def test_train_missing_config_returns_1(self, tmp_path, capsys):
        status = C.main(["train", "--config", str(tmp_path / "none.ini")])
        assert status == 1
        assert "not found" in capsys.readouterr().err

    def test_oracle_verify_passes(self, tmp_path, capsys):
        status = C.main(["oracle-verify", "--pairs", "5", "--resolution", "64",
                         "--out", str(tmp_path)])
        assert status == 0
        assert "PASS" in capsys.readouterr().out
        lines = (tmp_path / "oracle_verify.csv").read_bytes().split(b"\r\n")
        assert lines[0] == b"pair,identity_gap"
        gaps = [float(l.split(b",")[1]) for l in lines[1:] if l]
        assert len(gaps) == 5 and max(gaps) < 1e-9

    def test_adversarial_and_report(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, rounds=1,
                                out=str(tmp_path / "icn"))
        assert C.main(["train", "--config", str(cfg_path)]) == 0
        base_path = write_config(tmp_path, name="base.ini", mode="baseline",
                                 out=str(tmp_path / "base"))
        assert C.main(["train", "--config", str(base_path)]) == 0
        capsys.readouterr()
        status = C.main([
            "adversarial",
            "--model-a", str(tmp_path / "base" / "model_final.bin"),
            "--model-b", str(tmp_path / "icn" / "model_final.bin"),
            "--config", str(cfg_path), "--eps", "0.125",
            "--out", str(tmp_path / "adv")])
        assert status == 0
        out_text = capsys.readouterr().out
        assert "->" in out_text and "eligible" in out_text
        rows = (tmp_path / "adv" / "fooling.csv").read_bytes().split(b"\r\n")
        assert rows[0] == b"direction,eligible,adversarial,cross_fool,epsilon"
        for line in rows[1:3]:
            cells = line.split(b",")
            eligible, adv, cross = int(cells[1]), int(cells[2]), int(cells[3])
            assert cross <= adv <= eligible
        assert C.main(["report", "--run", str(tmp_path / "icn")]) == 0
        report = capsys.readouterr().out
        assert "round" in report and "store_size" in report
