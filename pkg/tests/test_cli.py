import csv
import io

import numpy as np
import pytest

from mrfswi import cli
from mrfswi.image_model import ComplexImage, RealField, load_mcf, load_real_field, save_mcf

SMALL = ["--size", "40", "--channels", "3", "--vessels", "3"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def phantom_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "p.mcf"
    assert cli.main(["phantom", *SMALL, "--sigma", "0.003", "--seed", "7", "--out", str(path)]) == 0
    return path


def test_phantom_deterministic(tmp_path, capsys, phantom_file):
    other = tmp_path / "q.mcf"
    code, out, _ = run(capsys, "phantom", *SMALL, "--sigma", "0.003", "--seed", "7", "--out", other, "--truth", tmp_path / "t.mcf")
    assert code == 0 and "3 channels of 40x40" in out
    assert other.read_bytes() == phantom_file.read_bytes()
    truth = load_real_field(tmp_path / "t.mcf").data
    assert set(np.unique(truth)) <= {-1.0, 0.0, 1.0} and (truth == 1).any()
    run(capsys, "phantom", *SMALL, "--sigma", "0.003", "--seed", "8", "--out", other)
    assert other.read_bytes() != phantom_file.read_bytes()


def test_phantom_geometry_flags(tmp_path, capsys, phantom_file):
    out = tmp_path / "g.mcf"
    code, _, _ = run(capsys, "phantom", *SMALL, "--sigma", "0", "--ring-radius", "400", "--loop-radius", "60", "--out", out)
    assert code == 0
    far = np.abs(load_mcf(out).data)
    near = np.abs(load_mcf(phantom_file).data)
    # a distant ring evens out each coil's magnitude
    assert np.ptp(far[0]) < np.ptp(near[0])
    code, _, err = run(capsys, "phantom", *SMALL, "--standoff", "-1", "--out", out)
    assert code == cli.EXIT_INVALID and "standoff" in err
    code, _, _ = run(capsys, "phantom", *SMALL, "--min-contrast", "0", "--out", out)
    assert code == cli.EXIT_INVALID


def test_fit(tmp_path, capsys, phantom_file):
    code, out, _ = run(capsys, "fit", phantom_file, "--out", tmp_path / "f.csv")
    assert code == 0 and out.count("channel") == 3
    rows = list(csv.reader(io.StringIO((tmp_path / "f.csv").read_text())))
    assert rows[0] == ["channel", "snr", "alpha", "sigma", "chi2", "noise_threshold"]
    assert len(rows) == 4 and all(float(r[1]) > 0 for r in rows[1:])


def test_filter_with_trace(tmp_path, capsys, phantom_file):
    code, out, _ = run(capsys, "filter", phantom_file, "--max-iter", "2", "--out", tmp_path / "o.mcf", "--trace", tmp_path / "t.csv")
    assert code == 0
    filtered = load_mcf(tmp_path / "o.mcf")
    assert filtered.data.shape == (3, 40, 40)
    header = (tmp_path / "t.csv").read_text().splitlines()[0]
    assert header == "iteration,change_0,change_1,change_2,delta_0,delta_1,delta_2,w_c_0,w_c_1,w_c_2"


def test_calibrate(tmp_path, capsys, phantom_file):
    code, out, _ = run(capsys, "calibrate", phantom_file, "--k-points", "5", "--max-iter", "2", "--out", tmp_path / "c.csv")
    assert code == 0 and out.startswith("optimum K=")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "K,CNR,smoothed_CNR" and len(lines) == 6
    code, _, err = run(capsys, "calibrate", phantom_file, "--k-points", "3", "--out", tmp_path / "c.csv")
    assert code == cli.EXIT_INVALID and err.count("\n") == 1 and "error" in err


def test_combine_methods(tmp_path, capsys, phantom_file):
    for method in ("weighted", "mrf"):
        code, out, _ = run(capsys, "combine", phantom_file, "--method", method, "--max-iter", "2", "--out", tmp_path / f"{method}.mcf")
        assert code == 0 and out.startswith("CNR=")
        assert load_mcf(tmp_path / f"{method}.mcf").channels == 1


def test_swi_and_mip(tmp_path, capsys, phantom_file):
    run(capsys, "combine", phantom_file, "--method", "weighted", "--out", tmp_path / "c.mcf")
    code, _, _ = run(capsys, "swi", tmp_path / "c.mcf", "--radius", "2", "--out", tmp_path / "s.mcf", "--pgm", tmp_path / "s.pgm")
    assert code == 0
    swi = load_real_field(tmp_path / "s.mcf").data
    mag = np.abs(load_mcf(tmp_path / "c.mcf").data[0])
    assert np.all(swi <= mag + 1e-6)
    assert (tmp_path / "s.pgm").read_bytes().startswith(b"P5\n")

    code, out, _ = run(capsys, "mip", tmp_path / "s.mcf", tmp_path / "c.mcf", tmp_path / "s.mcf", "--slab", "2", "--out-prefix", tmp_path / "m", "--pgm")
    assert code == 0 and "2 projections" in out
    proj = load_real_field(tmp_path / "m_000.mcf").data
    assert np.allclose(proj, np.minimum(swi, mag), atol=1e-6)
    assert (tmp_path / "m_001.pgm").exists()


def test_swi_rejects_multichannel(capsys, phantom_file, tmp_path):
    code, _, err = run(capsys, "swi", phantom_file, "--out", tmp_path / "s.mcf")
    assert code == cli.EXIT_INVALID and "channels" in err


def test_experiment(tmp_path, capsys):
    code, out, _ = run(
        capsys, "experiment", "--size", "40", "--channels", "3", "--vessels", "3",
        "--sigmas", "0.003,0.011", "--k-points", "5", "--max-iter", "2", "--out-dir", tmp_path / "e",
    )
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["sigma", "opt_K", "opt_CNR", "baseline_CNR", "crossing_K"]
    assert [r[0] for r in rows[1:]] == ["0.003", "0.011"]
    assert (tmp_path / "e" / "summary.csv").read_text() == out


def test_exit_codes(tmp_path, capsys):
    code, _, err = run(capsys, "fit", tmp_path / "missing.mcf", "--out", tmp_path / "f.csv")
    assert code == cli.EXIT_IO and err.startswith("mrfswi fit: error:")
    bad = tmp_path / "bad.mcf"
    bad.write_bytes(b"NOPE" + bytes(40))
    code, _, _ = run(capsys, "fit", bad, "--out", tmp_path / "f.csv")
    assert code == cli.EXIT_FORMAT
    code, _, _ = run(capsys, "phantom", "--size", "2", "--out", tmp_path / "x.mcf")
    assert code == cli.EXIT_INVALID
    code, _, _ = run(capsys, "phantom", "--sigma", "-1", "--size", "16", "--vessels", "0", "--out", tmp_path / "x.mcf")
    assert code == cli.EXIT_INVALID
    code, _, _ = run(capsys, "phantom", "--size", "16", "--vessels", "0", "--out", tmp_path / "nodir" / "x.mcf")
    assert code == cli.EXIT_IO
    with pytest.raises(SystemExit) as exc:
        cli.main(["phantom", "--bogus"])
    assert exc.value.code == cli.EXIT_USAGE


def test_mip_loads_real_and_complex(tmp_path, capsys):
    save_mcf(RealField(np.full((4, 4), 0.2)), tmp_path / "a.mcf")
    save_mcf(ComplexImage(np.full((4, 4), 0.5j)), tmp_path / "b.mcf")
    code, _, _ = run(capsys, "mip", tmp_path / "a.mcf", tmp_path / "b.mcf", "--slab", "2", "--out-prefix", tmp_path / "m")
    assert code == 0
    assert np.allclose(load_real_field(tmp_path / "m_000.mcf").data, 0.2)


@pytest.mark.parametrize("cmd", [None, "phantom", "fit", "filter", "calibrate", "combine", "swi", "mip", "experiment"])
def test_help_lists_exit_codes(cmd, capsys):
    argv = ([cmd] if cmd else []) + ["--help"]
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert "exit codes:" in text
    if cmd in ("phantom", "experiment"):
        assert "(rad)" in text and "default:" in text
