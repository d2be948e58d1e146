import io
import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from linda import __version__
from linda.cli import main
from linda.report import (format_value, parse_value, plot_data, read_result, result_to_text,
                          write_table)
from oracles import linda_reference


@pytest.fixture
def golden(data_dir):
    return data_dir / "golden"


def _run(argv):
    return main([str(a) for a in argv])


def test_golden_bytes(golden, tmp_path):
    out = tmp_path / "res.tsv"
    assert _run(["analyze", golden / "counts.tsv", golden / "meta.tsv",
                 "--formula", "group", "-o", out]) == 0
    assert out.read_bytes() == (golden / "expected.tsv").read_bytes()


def test_golden_against_reference_pipeline(golden):
    Y = pd.read_csv(golden / "counts.tsv", sep="\t", index_col=0).to_numpy()
    meta = pd.read_csv(golden / "meta.tsv", sep="\t", index_col=0)
    u = (meta["group"] == "treated").to_numpy(dtype=float)
    ref = linda_reference(Y, u)
    res = read_result(golden / "expected.tsv")
    np.testing.assert_allclose(res.alpha_hat, ref["alpha"], rtol=0, atol=1e-12)
    np.testing.assert_allclose(res.stderr, ref["stderr"], rtol=1e-12)
    np.testing.assert_allclose(res.t_stat, ref["T"], rtol=1e-12)
    np.testing.assert_allclose(res.pvalue, ref["p"], rtol=1e-9)
    assert np.array_equal(res.reject, ref["reject"])
    assert res.meta["bias_shift"] == pytest.approx(ref["shift"], abs=1e-12)
    assert res.meta["bandwidth"] == pytest.approx(ref["bandwidth"], rel=1e-12)
    # the planted taxa come out on top
    assert set(np.array(res.taxa_ids)[res.reject]) == {"otu1", "otu4"}


def test_manifest_written(golden, tmp_path):
    out = tmp_path / "res.tsv"
    argv = ["analyze", str(golden / "counts.tsv"), str(golden / "meta.tsv"),
            "--formula", "group", "-o", str(out), "--seed", "9"]
    assert main(argv) == 0
    man = json.loads((tmp_path / "res.tsv.manifest.json").read_text())
    assert man["command"] == ["linda", *argv]
    assert man["seeds"] == [9]
    assert man["versions"]["linda"] == __version__
    assert len(man["config_digest"]) == 64
    assert set(man["inputs"].values()) and all(len(v) == 64 for v in man["inputs"].values())
    assert man["wall_clock_seconds"] >= 0
    assert man["config"]["zero_strategy"] == "pseudo"


def test_manifest_to_stderr_when_stdout(golden, capsys):
    assert _run(["analyze", golden / "counts.tsv", golden / "meta.tsv",
                 "--formula", "group"]) == 0
    cap = capsys.readouterr()
    assert cap.out == (golden / "expected.tsv").read_text()
    assert json.loads(cap.err)["config"]["formula"] == "group"


def test_missing_column_exit_code(golden, capsys):
    code = _run(["analyze", golden / "counts.tsv", golden / "meta.tsv",
                 "--formula", "group + smoking"])
    assert code == 2
    assert "smoking" in capsys.readouterr().err


def test_missing_file_exit_code(tmp_path, capsys):
    assert _run(["analyze", tmp_path / "nope.tsv", tmp_path / "nope2.tsv",
                 "--formula", "g"]) == 2


def test_bad_cell_exit_code(tmp_path, capsys):
    (tmp_path / "c.tsv").write_text("id\ta\tb\nx\t1\toops\n")
    (tmp_path / "m.tsv").write_text("s\tg\na\t0\nb\t1\n")
    assert _run(["analyze", tmp_path / "c.tsv", tmp_path / "m.tsv", "--formula", "g"]) == 2
    err = capsys.readouterr().err
    assert "x" in err and "b" in err


def test_numeric_failure_exit_code(golden, tmp_path, capsys):
    meta = pd.read_csv(golden / "meta.tsv", sep="\t", index_col=0)
    u = (meta["group"] == "treated").to_numpy(dtype=float)
    meta["dose"] = u * 3 + 1e-12 * np.arange(len(u))
    meta.to_csv(tmp_path / "m.tsv", sep="\t")
    code = _run(["analyze", golden / "counts.tsv", tmp_path / "m.tsv",
                 "--formula", "group + dose"])
    assert code == 3
    assert "condition" in capsys.readouterr().err


def _smoke_schema(tmp_path, rng):
    subjects = 12
    samples = [f"x{j}" for j in range(subjects * 2)]
    subject = np.repeat([f"p{k}" for k in range(subjects)], 2)
    smoke = np.repeat(rng.integers(0, 2, subjects), 2)
    sex = np.repeat(np.where(rng.random(subjects) < 0.5, "Female", "Male"), 2)
    pd.DataFrame({"smoke": np.where(smoke, "yes", "no"), "sex": sex, "subject": subject},
                 index=samples).to_csv(tmp_path / "meta.tsv", sep="\t")
    m = 40
    logx = rng.normal(5, 1, (m, 1)) + rng.normal(0, 0.8, (m, subjects))[:, np.repeat(
        np.arange(subjects), 2)] + rng.normal(0, 0.5, (m, len(samples)))
    p = np.exp(logx) / np.exp(logx).sum(0)
    Y = np.stack([rng.multinomial(4000, p[:, j]) for j in range(len(samples))], axis=1)
    pd.DataFrame(Y, index=[f"t{i}" for i in range(m)], columns=samples).to_csv(
        tmp_path / "counts.tsv", sep="\t")


def test_random_intercept_path(tmp_path, rng):
    _smoke_schema(tmp_path, rng)
    out = tmp_path / "r.tsv"
    assert _run(["analyze", tmp_path / "counts.tsv", tmp_path / "meta.tsv",
                 "--formula", "smoke + sex | subject", "-o", out]) == 0
    res = read_result(out)
    assert res.meta["method"] == "lmm" and res.meta["n_groups"] == 12
    man = json.loads((tmp_path / "r.tsv.manifest.json").read_text())
    assert man["config"]["method"] == "lmm"
    assert man["config"]["formula"] == "smoke + sex | subject"
    out2 = tmp_path / "r2.tsv"
    assert _run(["analyze", tmp_path / "counts.tsv", tmp_path / "meta.tsv",
                 "--formula", "smoke + sex", "--random-intercept", "subject",
                 "-o", out2]) == 0
    body = [ln for ln in out.read_text().splitlines() if not ln.startswith("#")]
    body2 = [ln for ln in out2.read_text().splitlines() if not ln.startswith("#")]
    assert body == body2


def test_flags_recorded(golden, tmp_path):
    out = tmp_path / "r.tsv"
    assert _run(["analyze", golden / "counts.tsv", golden / "meta.tsv", "--formula", "group",
                 "--bias", "off", "--zero-handling", "imputation", "--kde-grid", "256",
                 "--winsor-quantile", "off", "--q", "0.1", "-o", out]) == 0
    res = read_result(out)
    assert res.meta["bias_correction"] == "off" and res.meta["bias_shift"] == 0
    assert res.meta["zero_strategy"] == "imputation"
    assert res.meta["winsor_quantile"] == "off" and res.meta["target_fdr"] == 0.1


def test_invalid_flag_values(golden):
    with pytest.raises(SystemExit) as err:
        main(["analyze", str(golden / "counts.tsv"), str(golden / "meta.tsv"),
              "--formula", "group", "--kde-bandwidth", "-2"])
    assert err.value.code == 2


def test_version(capsys):
    with pytest.raises(SystemExit) as err:
        main(["--version"])
    assert err.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_plot_data_effectsize(golden, tmp_path):
    res = read_result(golden / "expected.tsv")
    tab = plot_data(res, "effectsize", fdr=0.1)
    assert list(tab.columns) == ["taxon", "debiased_coef", "nondebiased_coef", "ci_lo", "ci_hi"]
    assert set(tab.taxon) == {"otu1", "otu4", "otu2"}
    np.testing.assert_allclose(tab.debiased_coef - tab.nondebiased_coef, res.meta["bias_shift"],
                               rtol=0, atol=1e-15)
    idx = [res.taxa_ids.index(t) for t in tab.taxon]
    half = stats.t.ppf(0.975, 14) * res.stderr[idx]
    np.testing.assert_allclose(tab.ci_hi - tab.debiased_coef, half, rtol=0, atol=1e-9)
    assert plot_data(res, "effectsize", fdr=0.0).empty


def test_plot_data_cli(golden, tmp_path):
    out = tmp_path / "v.tsv"
    assert _run(["plot-data", golden / "expected.tsv", "--kind", "volcano", "-o", out]) == 0
    tab = pd.read_csv(out, sep="\t")
    assert list(tab.columns) == ["taxon", "coef", "neg_log10_p", "reject"]
    assert len(tab) == 10
    out = tmp_path / "e.tsv"
    assert _run(["plot-data", golden / "expected.tsv", "--fdr", "0", "-o", out]) == 0
    assert out.read_text() == "taxon\tdebiased_coef\tnondebiased_coef\tci_lo\tci_hi\n"


def test_result_round_trip(golden):
    text = (golden / "expected.tsv").read_text()
    res = read_result(io.StringIO(text))
    assert result_to_text(res) == text


def test_value_round_trip(rng):
    for x in rng.normal(size=200) * 10.0 ** rng.integers(-300, 300, 200):
        assert parse_value(format_value(x)) == x
    assert format_value(float("nan")) == "NA" and parse_value("NA") is None
    assert format_value(14.0) == "14"
    frame = pd.DataFrame({"a": [0.1, np.nan], "b": ["x", "y"]})
    buf = io.StringIO()
    write_table(frame, buf)
    assert buf.getvalue() == "a\tb\n0.1\tx\nNA\ty\n"


def test_simulate_rows_and_determinism(tmp_path):
    argv = ["simulate", "--setting", "S0", "--design", "C0", "--m", "60", "--n", "20",
            "--gamma", "0.05", "--reps", "3", "--seed", "1", "--threads", "1"]
    a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
    assert main(argv + ["-o", str(a)]) == 0
    assert main(argv + ["-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    tab = pd.read_csv(a, sep="\t")
    assert list(tab.effect_index) == [1, 2, 3, 4, 5, 6]
    assert {"fdr", "tpr", "fdr_ci"} <= set(tab.columns)
    man = json.loads((tmp_path / "a.tsv.manifest.json").read_text())
    assert man["seeds"] == [1]


def test_simulate_bias_flag_changes_fdr(tmp_path):
    base = ["simulate", "--m", "150", "--n", "50", "--gamma", "0.2", "--reps", "8",
            "--effect-index", "6", "--threads", "1"]
    on, off = tmp_path / "on.tsv", tmp_path / "off.tsv"
    assert main(base + ["--bias", "on", "-o", str(on)]) == 0
    assert main(base + ["--bias", "off", "-o", str(off)]) == 0
    assert pd.read_csv(on, sep="\t").fdr[0] != pd.read_csv(off, sep="\t").fdr[0]


def test_module_entry_point(golden):
    proc = subprocess.run([sys.executable, "-m", "linda", "--version"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
