"""Exit codes, verdict lines, and cross-command pipelines."""

import io
import logging
import os
from contextlib import redirect_stdout

import numpy as np
import pytest

from bnnverify.arch import build_arch_a, build_arch_b, random_tiny_network, \
    with_random_weights
from bnnverify.bench import save_ppm
from bnnverify.cli import main, _configure_logging
from bnnverify.layers import Flatten, QDense
from bnnverify.network import Network, predict
from bnnverify.onnx_io import serialize_model
from bnnverify.vnnlib import generate_property, parse_property

BRITTLE_W = [[1.0, 1.0, -1.0], [-1.0, 1.0, 1.0], [1.0, -1.0, 1.0], [-1.0, -1.0, 1.0]]
BRITTLE_IMG = [1.0, 1.0, 3.0, 3.0]
BRITTLE_LABEL = 2  # argmax at the image itself; eps=1 admits a flip


def run_cli(*argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(list(argv))
    return code, buf.getvalue()


def write_toy(tmp_path, epsilon=1):
    net = Network(
        input_shape=(1, 4, 1),
        layers=(Flatten(), QDense(3, np.array(BRITTLE_W), quantize_input=False)),
        num_classes=3,
    )
    model = tmp_path / "toy.onnx"
    model.write_bytes(serialize_model(net))
    prop = tmp_path / "toy.vnnlib"
    prop.write_text(generate_property(
        np.array(BRITTLE_IMG).reshape(1, 4, 1), epsilon, BRITTLE_LABEL,
        num_outputs=3,
    ))
    return str(model), str(prop)


class TestInspect:
    def test_arch_a_param_line(self, tmp_path):
        rng = np.random.default_rng(0)
        net = with_random_weights(build_arch_a(64, 64), rng)
        path = tmp_path / "a.onnx"
        path.write_bytes(serialize_model(net))
        code, out = run_cli("inspect", str(path))
        assert code == 0
        assert "binary=1772896 real=2368 total=1775264" in out

    def test_arch_b_param_line(self, tmp_path):
        rng = np.random.default_rng(0)
        net = with_random_weights(build_arch_b(48, 48), rng)
        path = tmp_path / "b.onnx"
        path.write_bytes(serialize_model(net))
        code, out = run_cli("inspect", str(path))
        assert code == 0
        assert "total=905120" in out

    def test_truncated_model_exits_65(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        data = serialize_model(random_tiny_network(rng))
        path = tmp_path / "half.onnx"
        path.write_bytes(data[: len(data) // 2])
        code, _ = run_cli("inspect", str(path))
        assert code == 65
        assert "byte offset" in capsys.readouterr().err

    def test_missing_file_exits_65(self, tmp_path):
        code, _ = run_cli("inspect", str(tmp_path / "nope.onnx"))
        assert code == 65


class TestVerifyCommand:
    def test_point_ball_verifies_with_exit_0(self, tmp_path):
        model, prop = write_toy(tmp_path, epsilon=0)
        code, out = run_cli("verify", model, prop, "--engine", "brute")
        assert out.splitlines()[0] == "unsat"
        assert code == 0

    def test_falsified_writes_witness_and_exits_1(self, tmp_path):
        model, prop = write_toy(tmp_path, epsilon=1)
        code, out = run_cli("verify", model, prop, "--engine", "bab",
                            "--out", str(tmp_path))
        lines = out.splitlines()
        assert lines[0] == "sat"
        assert code == 1
        assert lines[1].startswith("witness ")
        assert os.path.exists(lines[1].split(" ", 1)[1])

    def test_unknown_exits_2(self, tmp_path):
        model, prop = write_toy(tmp_path, epsilon=0)
        code, out = run_cli("verify", model, prop, "--engine", "falsify")
        # a point ball around the true label has nothing to falsify
        assert out.splitlines()[0] == "unknown"
        assert code == 2

    def test_timeout_exits_2(self, tmp_path):
        model, prop = write_toy(tmp_path, epsilon=1)
        code, out = run_cli("verify", model, prop, "--engine", "bab",
                            "--timeout", "0")
        assert out.splitlines()[0] == "timeout"
        assert code == 2

    def test_usage_error_is_64(self):
        code, _ = run_cli("verify")
        assert code == 64
        code, _ = run_cli("frobnicate")
        assert code == 64


class TestFalsifyPipeline:
    def test_falsify_then_check(self, tmp_path):
        model, prop = write_toy(tmp_path, epsilon=1)
        code, out = run_cli("falsify", model, prop, "--out", str(tmp_path))
        lines = out.splitlines()
        assert lines[0] == "sat"
        assert code == 1
        witness_path = lines[1].split(" ", 1)[1]
        code, out = run_cli("check", model, prop, witness_path)
        assert out.splitlines()[0] == "valid"
        assert code == 0

    def test_check_rejects_out_of_ball_witness(self, tmp_path):
        model, prop = write_toy(tmp_path, epsilon=1)
        bad = tmp_path / "bad.witness.txt"
        bad.write_text("(X_0 9001)\n(X_1 1)\n(X_2 3)\n(X_3 3)\n")
        code, out = run_cli("check", model, prop, str(bad))
        assert out.splitlines()[0] == "invalid"
        assert code == 1

    def test_determinism_under_seed(self, tmp_path):
        model, prop = write_toy(tmp_path, epsilon=1)
        a = run_cli("falsify", model, prop, "--seed", "5",
                    "--out", str(tmp_path / "a"))
        b = run_cli("falsify", model, prop, "--seed", "5",
                    "--out", str(tmp_path / "b"))
        assert a[0] == b[0] == 1
        wa = open(a[1].splitlines()[1].split(" ", 1)[1]).read()
        wb = open(b[1].splitlines()[1].split(" ", 1)[1]).read()
        assert wa == wb


class TestGenerateCommand:
    def test_property_file_round_trips(self, tmp_path):
        rng = np.random.default_rng(5)
        net = random_tiny_network(rng, max_side=3, channels=3)
        model = tmp_path / "m.onnx"
        model.write_bytes(serialize_model(net))
        img = rng.integers(0, 9, size=net.input_shape).astype(float)
        ppm = tmp_path / "img.ppm"
        ppm.write_bytes(save_ppm(img))
        code, out = run_cli("generate", str(model), str(ppm),
                            "--epsilon", "2", "--index", "7",
                            "--out", str(tmp_path))
        assert code == 0
        path = out.strip()
        assert os.path.basename(path) == "model_3_idx_7_eps_2.00000.vnnlib"
        prop = parse_property(open(path).read())
        assert prop.target_label == predict(net, img)
        lo, hi = prop.bounds_arrays()
        assert np.array_equal(hi - lo, np.full(img.size, 4.0))

    def test_label_and_clip_flags(self, tmp_path):
        rng = np.random.default_rng(5)
        net = random_tiny_network(rng, max_side=3, channels=3)
        model = tmp_path / "m.onnx"
        model.write_bytes(serialize_model(net))
        img = np.zeros(net.input_shape)
        ppm = tmp_path / "img.ppm"
        ppm.write_bytes(save_ppm(img))
        code, out = run_cli("generate", str(model), str(ppm),
                            "--epsilon", "5", "--label", "1", "--clip",
                            "--out", str(tmp_path))
        assert code == 0
        prop = parse_property(open(out.strip()).read())
        assert prop.target_label == 1
        lo, hi = prop.bounds_arrays()
        assert np.all(lo == 0.0)  # clipped at the pixel floor
        assert np.all(hi == 5.0)


def rgb_benchmark_dirs(tmp_path):
    rng = np.random.default_rng(1)
    models_dir = tmp_path / "models"
    images_dir = tmp_path / "images"
    models_dir.mkdir()
    images_dir.mkdir()
    net = random_tiny_network(rng, max_side=3, channels=3)
    (models_dir / "tiny.onnx").write_bytes(serialize_model(net))
    for i in range(4):
        img = rng.integers(0, 9, size=net.input_shape).astype(float)
        label = predict(net, img)
        (images_dir / f"{label}_img{i}.ppm").write_bytes(save_ppm(img))
    return models_dir, images_dir


class TestBenchAndRun:
    def test_bench_then_run(self, tmp_path):
        models_dir, images_dir = rgb_benchmark_dirs(tmp_path)
        out_dir = tmp_path / "bench"
        code, out = run_cli("bench", "--models", str(models_dir),
                            "--images", str(images_dir),
                            "--epsilons", "0,1", "--timeout", "30",
                            "--out", str(out_dir))
        assert code == 0
        assert "6 instances" in out
        csv_path = out_dir / "instances.csv"
        assert csv_path.exists()
        results_dir = tmp_path / "results"
        code, out = run_cli("run", str(csv_path), "--engine", "brute",
                            "--out", str(results_dir))
        assert code == 0
        lines = out.splitlines()
        assert lines[0].startswith("verified=")
        results_csv = results_dir / "results.csv"
        assert results_csv.exists()
        body = results_csv.read_text().splitlines()
        assert body[0] == "instance,verdict,seconds,witness_path"
        assert len(body) == 7

    def test_bench_requires_both_dirs(self, tmp_path):
        code, _ = run_cli("bench", "--models", str(tmp_path))
        assert code == 64

    def test_bench_rejects_unlabeled_images(self, tmp_path):
        models_dir, images_dir = rgb_benchmark_dirs(tmp_path)
        (images_dir / "unlabeled.ppm").write_bytes(
            (images_dir / os.listdir(images_dir)[0]).read_bytes()
        )
        code, _ = run_cli("bench", "--models", str(models_dir),
                          "--images", str(images_dir),
                          "--out", str(tmp_path / "x"))
        assert code == 65


class TestScoreCommand:
    def test_table4_counts(self):
        code, out = run_cli(
            "score",
            "Marabou:0:18:0:1", "PyRAT:0:7:0:1",
            "NeuralSAT:0:31:0:4", "alpha-beta-CROWN:0:39:0:3",
        )
        assert code == 0
        lines = out.splitlines()
        assert "Marabou" in lines[1] and " 30" in lines[1] and "100%" in lines[1]
        assert lines[1].lstrip().startswith("1")
        assert any("NeuralSAT" in l and "-290" in l and "0%" in l for l in lines)
        assert any("PyRAT" in l and "-80" in l for l in lines)
        assert any("alpha-beta-CROWN" in l and "-60" in l for l in lines)

    def test_malformed_spec_is_usage_error(self):
        code, _ = run_cli("score", "Marabou:1:2")
        assert code == 64


class TestLogging:
    def test_bogus_level_warns_and_continues(self, monkeypatch, caplog):
        monkeypatch.setenv("BNNVERIFY_LOG", "NOISY")
        with caplog.at_level(logging.WARNING, logger="bnnverify.cli"):
            _configure_logging()
        assert any("NOISY" in r.message for r in caplog.records)

    def test_level_applies(self, monkeypatch):
        monkeypatch.setenv("BNNVERIFY_LOG", "debug")
        _configure_logging()  # must not raise
