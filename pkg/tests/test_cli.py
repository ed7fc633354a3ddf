import json

import numpy as np
import pytest

from hets import cli, nn, wire


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def keydir(tmp_path_factory):
    d = tmp_path_factory.mktemp("keys")
    assert cli.main(["keygen", "--profile", "test-4096", "--seed", "7", "--out", str(d)]) == 0
    return d


def test_keygen_writes_both_contexts(keydir):
    priv = wire.deserialize((keydir / "private.ctx").read_bytes())
    pub = wire.deserialize((keydir / "public.ctx").read_bytes())
    assert priv.is_private and not pub.is_private
    assert priv.galois_steps == pub.galois_steps
    assert priv.params.name == "test-4096"


def test_keygen_output(capsys, tmp_path):
    code, out, _ = run(capsys, "keygen", "--out", tmp_path, "--seed", "1")
    assert code == 0
    assert "galois steps" in out and "security" in out


def test_keygen_bad_directory(capsys, tmp_path):
    code, _, err = run(capsys, "keygen", "--out", tmp_path / "missing")
    assert code == 1
    assert err.startswith("ERROR IoError:")


def test_encrypt_decrypt_round_trip(capsys, keydir, tmp_path):
    out_file = tmp_path / "v.bin"
    code, out, _ = run(capsys, "encrypt", "--context", keydir / "public.ctx", "--values", "1.5,-2,3.25",
                       "--out", out_file)
    assert code == 0 and "3 values" in out
    code, out, _ = run(capsys, "decrypt", "--context", keydir / "private.ctx", "--in", out_file)
    assert code == 0
    assert np.allclose([float(v) for v in out.split()], [1.5, -2, 3.25], atol=1e-4)


def test_decrypt_needs_secret(capsys, keydir, tmp_path):
    out_file = tmp_path / "v.bin"
    run(capsys, "encrypt", "--context", keydir / "public.ctx", "--values", "1", "--out", out_file)
    code, _, err = run(capsys, "decrypt", "--context", keydir / "public.ctx", "--in", out_file)
    assert code == 1 and err.startswith("ERROR MissingKey:")


def test_corrupt_input_file(capsys, keydir, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"HETS\x01\x00\x03")
    code, _, err = run(capsys, "decrypt", "--context", keydir / "private.ctx", "--in", bad)
    assert code == 1 and err.startswith("ERROR Truncated:")


@pytest.fixture(scope="module")
def small_model(tmp_path_factory):
    rng = np.random.default_rng(0)
    m = nn.Model((3, 4), (nn.Linear(rng.uniform(-1, 1, (12, 4)), rng.uniform(-1, 1, 4)), nn.Square()))
    d = tmp_path_factory.mktemp("model")
    nn.save_model(m, d / "m.json")
    img = rng.uniform(0, 1, (3, 4))
    (d / "img.json").write_text(json.dumps(img.tolist()))
    return m, img, d


def test_infer_with_custom_model(capsys, keydir, small_model):
    m, img, d = small_model
    code, out, _ = run(capsys, "infer", "--context", keydir / "private.ctx", "--model", d / "m.json",
                       "--image", d / "img.json")
    assert code == 0
    logits = [float(v) for v in next(l for l in out.splitlines() if l.startswith("logits")).split()[1:]]
    want = nn.plain_forward(m, img).data
    assert np.allclose(logits, want, atol=1e-2)
    assert f"argmax {int(np.argmax(want))}" in out


def test_infer_table_has_eight_rows(capsys, model, images):
    code, out, _ = run(capsys, "infer", "--profile", "mnist-8192", "--backend", "mock", "--index", 4)
    assert code == 0
    names = [l.split("  ")[0].strip() for l in out.splitlines()]
    from hets.bench import MNIST_ROWS

    assert [n for n in names if n in MNIST_ROWS] == list(MNIST_ROWS)
    assert f"argmax {int(np.argmax(nn.plain_forward(model, images[4]).data))}" in out


def test_infer_missing_model(capsys, tmp_path):
    code, _, err = run(capsys, "infer", "--model", tmp_path / "absent.json")
    assert code == 1
    assert err.startswith("ERROR ParseError:") and "absent.json" in err


def test_infer_shape_mismatch(capsys, tmp_path):
    img = tmp_path / "img.json"
    img.write_text(json.dumps(np.zeros((5, 5)).tolist()))
    code, _, err = run(capsys, "infer", "--backend", "mock", "--image", img)
    assert code == 1 and err.startswith("ERROR ShapeError:")


def test_infer_over_the_wire(capsys, mnist_ctx, model, images):
    with wire.serve_inference("127.0.0.1:0", mnist_ctx, model) as srv:
        code, out, _ = run(capsys, "infer", "--profile", "mnist-8192", "--seed", mnist_ctx.seed,
                           "--connect", srv.address, "--index", 1)
    assert code == 0
    total = int(next(l for l in out.splitlines() if l.startswith("bytes total")).split()[2])
    assert total < 1.5e6
    assert f"argmax {int(np.argmax(nn.plain_forward(model, images[1]).data))}" in out


def test_bench_unary(capsys, tmp_path):
    report = tmp_path / "r.json"
    code, out, _ = run(capsys, "bench", "unary", "--shapes", "256", "--rounds", 1, "--iterations", 1,
                       "--report", report)
    assert code == 0
    doc = json.loads(report.read_text())
    assert [r["name"] for r in doc["rows"]] == ["negate", "square", "polyval"]
    assert doc["environment"]["cpu_count"] >= 1
    assert "reference (different hardware)" in out


def test_bench_binary_mock(capsys, tmp_path):
    report = tmp_path / "r.json"
    code, _, _ = run(capsys, "bench", "binary", "--backend", "mock", "--shapes", "256,1024",
                     "--rounds", 1, "--iterations", 1, "--report", report)
    assert code == 0
    names = {r["name"] for r in json.loads(report.read_text())["rows"]}
    assert {"add", "multiply", "sub", "dot", "add_plain", "multiply_plain", "sub_plain", "dot_plain"} == names


def test_bench_shape_too_large(capsys):
    code, _, err = run(capsys, "bench", "unary", "--profile", "mnist-8192", "--shapes", "16384")
    assert code == 1 and err.startswith("ERROR ShapeTooLarge:")


def test_usage_errors(capsys):
    code, _, err = run(capsys, "bench", "nope")
    assert code == 2 and err.startswith("ERROR UsageError:")
    code, _, err = run(capsys, "frobnicate")
    assert code == 2
    code, _, err = run(capsys, "encrypt", "--values", "1")
    assert code == 2


def test_worker_count_validation(capsys, monkeypatch):
    code, _, err = run(capsys, "bench", "unary", "--workers", 0, "--shapes", "256")
    assert code == 1 and err.startswith("ERROR InvalidWorkerCount:")
    monkeypatch.setenv("HETS_WORKERS", "abc")
    code, _, err = run(capsys, "bench", "unary", "--shapes", "256")
    assert code == 2


def test_workers_from_environment(capsys, monkeypatch, tmp_path):
    monkeypatch.setenv("HETS_WORKERS", "3")
    report = tmp_path / "r.json"
    run(capsys, "bench", "unary", "--backend", "mock", "--shapes", "256", "--rounds", 1, "--iterations", 1,
        "--report", report)
    assert json.loads(report.read_text())["environment"]["workers"] == 3
