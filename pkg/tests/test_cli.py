import numpy as np
import pytest

from neoplan.cli import main


@pytest.fixture
def model(tmp_path):
    m = tmp_path / "m.json"
    w = tmp_path / "m.npwt"
    rc = main(["gen", "--kind", "chain", "--depth", "2", "--channels", "8",
               "--hw", "10", "--out", str(m), "--weights", str(w)])
    assert rc == 0
    return m, w


def test_gen_creates_files(model):
    m, w = model
    assert m.exists() and w.exists()


def test_tune_plan_run(model, tmp_path, capsys):
    m, w = model
    db = tmp_path / "db.npsd"
    rc = main(["tune", "--model", str(m), "--weights", str(w),
               "--schedule-db", str(db), "--repeats", "1", "--budget", "8",
               "--threads", "1"])
    assert rc == 0 and db.exists()

    plan_file = tmp_path / "plan.json"
    rc = main(["plan", "--model", str(m), "--weights", str(w),
               "--schedule-db", str(db), "--emit-plan", str(plan_file)])
    assert rc == 0 and plan_file.exists()
    assert "solver=" in capsys.readouterr().out

    out = tmp_path / "out.bin"
    ref = tmp_path / "ref.bin"
    rc = main(["run", "--model", str(m), "--weights", str(w),
               "--plan", str(plan_file), "--samples", "2", "--threads", "1",
               "--out", str(out)])
    assert rc == 0
    rc = main(["run", "--model", str(m), "--weights", str(w),
               "--samples", "2", "--threads", "1", "--out", str(ref)])
    assert rc == 0
    a = np.fromfile(out, dtype="<f4")
    b = np.fromfile(ref, dtype="<f4")
    assert np.abs(a - b).max() / max(1.0, np.abs(b).max()) < 1e-4


def test_run_with_raw_input(model, tmp_path):
    m, w = model
    x = np.random.default_rng(0).standard_normal((1, 8, 10, 10)).astype("<f4")
    xf = tmp_path / "x.bin"
    x.tofile(xf)
    rc = main(["run", "--model", str(m), "--weights", str(w),
               "--input", str(xf), "--samples", "1", "--threads", "1"])
    assert rc == 0


def test_run_input_size_mismatch(model, tmp_path, capsys):
    m, w = model
    xf = tmp_path / "x.bin"
    np.zeros(17, dtype="<f4").tofile(xf)
    rc = main(["run", "--model", str(m), "--weights", str(w),
               "--input", str(xf), "--samples", "1"])
    assert rc == 2


def test_plan_without_tuning_exits_4(model, tmp_path):
    m, w = model
    rc = main(["plan", "--model", str(m), "--weights", str(w),
               "--schedule-db", str(tmp_path / "empty.npsd")])
    assert rc == 4


def test_corrupt_model_exits_3(tmp_path):
    m = tmp_path / "m.json"
    m.write_text("not json at all {")
    rc = main(["run", "--model", str(m), "--weights", str(tmp_path / "w.npwt"),
               "--samples", "1"])
    assert rc == 3


def test_missing_file_exits_3(tmp_path):
    rc = main(["run", "--model", str(tmp_path / "none.json"),
               "--weights", str(tmp_path / "none.npwt"), "--samples", "1"])
    assert rc == 3


def test_ablate(model, tmp_path, capsys):
    m, w = model
    db = tmp_path / "db.npsd"
    assert main(["tune", "--model", str(m), "--weights", str(w),
                 "--schedule-db", str(db), "--repeats", "1", "--budget", "4",
                 "--threads", "1"]) == 0
    rc = main(["ablate", "--model", str(m), "--weights", str(w),
               "--schedule-db", str(db), "--samples", "2", "--threads", "1"])
    assert rc == 0
    out = capsys.readouterr().out
    for row in ("baseline-nchw", "layout-opt", "transform-elim", "global-search"):
        assert row in out


def test_scaling(model, capsys):
    m, w = model
    rc = main(["scaling", "--model", str(m), "--weights", str(w),
               "--samples", "2", "--thread-list", "1"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.startswith("threads,samples,mean_ns,stderr_ns")
