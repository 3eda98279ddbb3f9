import json
import os
import subprocess
import sys

import numpy as np
import pytest

from nvcodec.cli import main
from nvcodec.codec import deserialize
from nvcodec.render import read_ppm
from nvcodec.synthetic import drifting_sinusoids, sinusoid_sum
from nvcodec.volume import load_raw, save_raw

RES = ["8", "8", "8"]
FAST = ["--blocks", "2", "--epochs", "3", "--batch", "64", "--lr", "0.01", "--omega0", "10"]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def run_exit(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    return info.value.code, capsys.readouterr().err


@pytest.fixture(scope="module")
def encoded(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    raw = d / "vol.raw"
    save_raw(sinusoid_sum((8, 8, 8)), raw)
    model = d / "vol.nvcf"
    assert main(["encode", str(raw), str(model), "--resolution", *RES, "--weights", "150",
                 *FAST]) == 0
    return raw, model


def test_encode_reports_json(tmp_path, capsys):
    raw = tmp_path / "v.raw"
    save_raw(sinusoid_sum((8, 8, 8)), raw)
    log = tmp_path / "log.csv"
    code, out, err = run(["encode", str(raw), str(tmp_path / "v.nvcf"), "--resolution", *RES,
                          "--ratio", "4", "--log-csv", str(log), *FAST], capsys)
    assert code == 0
    record = json.loads(out)
    assert set(record) >= {"ratio", "psnr", "seconds", "bytes", "weights", "k"}
    assert record["weights"] <= 512 // 4
    assert record["bytes"] == os.path.getsize(tmp_path / "v.nvcf")
    assert "encoded" in err
    assert len(log.read_text().splitlines()) == 4


def test_decode_writes_raw(encoded, tmp_path, capsys):
    raw, model = encoded
    out = tmp_path / "out.raw"
    code, _, _ = run(["decode", str(model), str(out)], capsys)
    assert code == 0
    assert os.path.getsize(out) == 4 * 512
    up = tmp_path / "up.raw"
    assert run(["decode", str(model), str(up), "--resolution", "16", "16", "16"], capsys)[0] == 0
    assert os.path.getsize(up) == 4 * 16 ** 3
    np.testing.assert_array_equal(load_raw(out, (8, 8, 8)).values[[0, -1]],
                                  load_raw(up, (16, 16, 16)).values[[0, -1]])


def test_decode_failure_leaves_no_file(tmp_path, capsys):
    bad = tmp_path / "bad.nvcf"
    bad.write_bytes(b"NVCF" + b"\0" * 10)
    target = tmp_path / "out.raw"
    code, _, err = run(["decode", str(bad), str(target)], capsys)
    assert code == 1
    assert "error" in err
    assert os.listdir(tmp_path) == ["bad.nvcf"]


def test_metrics(encoded, capsys):
    raw, model = encoded
    code, out, _ = run(["metrics", str(model), str(raw), "--resolution", *RES, "--net-grad"],
                       capsys)
    assert code == 0
    report = json.loads(out)
    assert set(report) == {"psnr", "fd_grad_psnr", "net_grad_psnr", "mse", "data_range"}


def test_metrics_against_own_reconstruction_is_infinite(encoded, tmp_path, capsys):
    _, model = encoded
    recon = tmp_path / "recon.raw"
    run(["decode", str(model), str(recon)], capsys)
    code, out, _ = run(["metrics", str(model), str(recon), "--resolution", *RES], capsys)
    assert code == 0
    assert json.loads(out)["psnr"] == "inf"


def test_metrics_resolution_mismatch_is_usage_error(encoded, capsys):
    raw, model = encoded
    code, err = run_exit(["metrics", str(model), str(raw), "--resolution", "4", "4", "32"],
                         capsys)
    assert code == 2 and "does not match" in err


def test_render(encoded, tmp_path, capsys):
    _, model = encoded
    tf = tmp_path / "tf.txt"
    tf.write_text("0 0 0 0 0\n1 1 1 1 0.5\n")
    img = tmp_path / "img.ppm"
    code, _, _ = run(["render", str(model), str(img), "--tf", str(tf), "--width", "6",
                      "--height", "5", "--step", "0.05", "--shaded"], capsys)
    assert code == 0
    assert read_ppm(img).shape == (5, 6, 3)


def test_shaded_render_differs(encoded, tmp_path, capsys):
    _, model = encoded
    images = []
    for extra in ([], ["--shaded"]):
        path = tmp_path / f"img{len(extra)}.ppm"
        run(["render", str(model), str(path), "--width", "8", "--height", "8", "--step", "0.02",
             *extra], capsys)
        images.append(path.read_bytes())
    assert images[0] != images[1]


def test_render_time_on_3d_is_usage_error(encoded, tmp_path, capsys):
    _, model = encoded
    code, err = run_exit(["render", str(model), str(tmp_path / "x.ppm"), "--time", "0"], capsys)
    assert code == 2


def test_render_4d_needs_time(tmp_path, capsys):
    raw = tmp_path / "v4.raw"
    save_raw(drifting_sinusoids((4, 4, 4, 2)), raw)
    model = tmp_path / "v4.nvcf"
    assert main(["encode", str(raw), str(model), "--resolution", "4", "4", "4", "2",
                 "--weights", "200", *FAST]) == 0
    capsys.readouterr()
    assert run_exit(["render", str(model), str(tmp_path / "a.ppm")], capsys)[0] == 2
    code, _, _ = run(["render", str(model), str(tmp_path / "b.ppm"), "--time", "-1",
                      "--width", "4", "--height", "4", "--step", "0.1"], capsys)
    assert code == 0


def test_inspect_ratio_matches_encode(tmp_path, capsys):
    raw = tmp_path / "v.raw"
    save_raw(sinusoid_sum((8, 8, 8)), raw)
    model = tmp_path / "v.nvcf"
    _, out, _ = run(["encode", str(raw), str(model), "--resolution", *RES, "--weights", "150",
                     "--bits", "4", *FAST], capsys)
    encode_ratio = json.loads(out)["ratio"]
    code, out, _ = run(["inspect", str(model)], capsys)
    assert code == 0
    info = json.loads(out)
    assert info["ratio"] == encode_ratio
    assert info["bits"] == 4 and info["d"] == 3 and info["resolution"] == [8, 8, 8]
    assert len(info["layers"]) == 4
    assert info["total_bits"] == 8 * os.path.getsize(model)
    qm = deserialize(model.read_bytes())
    assert info["k"] == qm.arch.k


def test_ratio_budget_on_64_cubed(tmp_path, capsys):
    # m = 262144 // 50 = 5242; 16 k^2 + 21 k + 1 gives 4982 at k=17 and 5563 at k=18
    raw = tmp_path / "v.raw"
    save_raw(sinusoid_sum((64, 64, 64)), raw)
    code, out, _ = run(["encode", str(raw), str(tmp_path / "v.nvcf"), "--resolution", "64", "64",
                        "64", "--ratio", "50", "--epochs", "1"], capsys)
    assert code == 0
    record = json.loads(out)
    assert (record["k"], record["weights"]) == (17, 4982)


def test_inspect_corrupt_magic(encoded, tmp_path, capsys):
    _, model = encoded
    bad = tmp_path / "bad.nvcf"
    bad.write_bytes(b"JUNK" + model.read_bytes()[4:])
    code, _, err = run(["inspect", str(bad)], capsys)
    assert code == 1 and "magic" in err


@pytest.mark.parametrize("argv", [
    ["encode", "in.raw", "out.nvcf", "--resolution", "8", "8", "8"],
    ["encode", "in.raw", "out.nvcf", "--resolution", "8", "8", "8", "--ratio", "2",
     "--weights", "9"],
    ["encode", "in.raw", "out.nvcf", "--resolution", "8", "8", "8", "--ratio", "2",
     "--bits", "17"],
    ["frobnicate"],
])
def test_usage_errors(argv, capsys):
    assert run_exit(argv, capsys)[0] == 2


def test_missing_input_is_runtime_error(tmp_path, capsys):
    code, _, err = run(["encode", str(tmp_path / "nope.raw"), str(tmp_path / "o.nvcf"),
                        "--resolution", *RES, "--ratio", "2"], capsys)
    assert code == 1 and "error" in err


def test_wrong_size_input_is_runtime_error(tmp_path, capsys):
    raw = tmp_path / "v.raw"
    np.zeros(10, "<f4").tofile(raw)
    code, _, _ = run(["encode", str(raw), str(tmp_path / "o.nvcf"), "--resolution", *RES,
                      "--ratio", "2"], capsys)
    assert code == 1


def test_module_entry_point():
    result = subprocess.run([sys.executable, "-m", "nvcodec", "--help"], capture_output=True,
                            text=True)
    assert result.returncode == 0
    for command in ("encode", "decode", "metrics", "render", "inspect"):
        assert command in result.stdout
