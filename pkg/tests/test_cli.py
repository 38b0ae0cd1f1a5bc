import json

import numpy as np
import pytest

from hankelrec.cli import main, oracle_check
from hankelrec.hankel import make_shape
from hankelrec.ndhankel import make_nd_shape


@pytest.fixture
def generated(tmp_path):
    out = tmp_path / "gen"
    assert main(["gen", "--n", "127", "--rank", "3", "--p", "0.5", "--min-sep", "1.5",
                 "--seed", "3", "--out", str(out)]) == 0
    return out


def test_gen_files(generated):
    sig = json.loads((generated / "signal.json").read_text())
    obs = json.loads((generated / "observed.json").read_text())
    assert sig["n"] == 127 and len(sig["modes"]) == 3
    assert obs["mode"] == "without" and len(obs["indices"]) == len(obs["values"]) == 64


def test_recover_roundtrip(generated, tmp_path, capsys):
    out = tmp_path / "res"
    code = main(["recover", "--input", str(generated / "observed.json"), "--truth",
                 str(generated / "signal.json"), "--rank", "3", "--out", str(out), "--check"])
    assert code == 0
    res = json.loads((out / "result.json").read_text())
    assert res["converged"]["flag"] and res["trace"][-1]["true_err"] <= 1e-3
    rec = json.loads((out / "recovered.json").read_text())
    truth = json.loads((generated / "signal.json").read_text())
    x = np.array([complex(a, b) for a, b in rec["samples"]])
    t = np.array([complex(a, b) for a, b in truth["samples"]])
    assert np.linalg.norm(x - t) <= 1e-3 * np.linalg.norm(t)
    assert "ok" in capsys.readouterr().out


def test_rank_zero(generated, capsys):
    assert main(["recover", "--input", str(generated / "observed.json"), "--rank", "0"]) == 1
    assert "rank" in capsys.readouterr().err


def test_index_out_of_range(generated, tmp_path, capsys):
    obj = json.loads((generated / "observed.json").read_text())
    obj["indices"][0] = 127
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(obj))
    assert main(["recover", "--input", str(bad), "--rank", "3"]) == 1
    assert "127" in capsys.readouterr().err


def test_malformed_json(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["recover", "--input", str(bad), "--rank", "3"]) == 1
    bad.write_text(json.dumps({"n": 5, "indices": [1]}))
    assert main(["recover", "--input", str(bad), "--rank", "1"]) == 1


def test_max_iters_exit(generated):
    code = main(["recover", "--input", str(generated / "observed.json"), "--rank", "3",
                 "--max-iters", "2", "--tol-step", "0"])
    assert code == 2


def test_divergence_exit(generated):
    code = main(["recover", "--input", str(generated / "observed.json"), "--rank", "3",
                 "--stepsize", "1e9"])
    assert code == 3


def test_usage_error_exit():
    assert main(["recover"]) == 1
    assert main(["nonsense"]) == 1


def test_resampled_needs_mu(generated):
    args = ["recover", "--input", str(generated / "observed.json"), "--rank", "3", "--init", "resampled"]
    assert main(args) == 1
    assert main(args + ["--truth", str(generated / "signal.json")]) == 0


def test_iht(generated):
    assert main(["recover", "--input", str(generated / "observed.json"), "--rank", "3",
                 "--algo", "iht"]) == 0


def test_phase_command_deterministic(tmp_path):
    args = ["phase", "--n", "63", "--m", "32", "--rank", "2", "--trials", "5", "--seed", "7",
            "--threads", "1", "--no-timing"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "phase.csv").read_bytes()
    assert a == (tmp_path / "b" / "phase.csv").read_bytes()
    assert a.startswith(b"n,p,r,success_rate,mean_iters,mean_ms\n")


def test_config_file_and_override(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"kind": "noise", "n_values": [127], "m_values": [64],
                                "r_values": [2], "sigma_values": [0.1], "trials": 2}))
    assert main(["noise", "--config", str(conf), "--sigma-list", "0.01", "0.1",
                 "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "noise.csv").read_text().splitlines()
    assert rows[0] == "n,m,sigma,snr_db,mean_rel_err"
    assert [r.split(",")[2] for r in rows[1:]] == ["0.01", "0.1"]


def test_config_kind_mismatch(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"kind": "timing"}))
    assert main(["phase", "--config", str(conf)]) == 1


def test_nd_demo_small(tmp_path):
    assert main(["nd-demo", "--dims", "7", "7", "11", "--rank", "2", "--fraction", "0.3",
                 "--trials", "2", "--out", str(tmp_path), "--check"]) == 0
    rows = (tmp_path / "nd_demo.csv").read_text().splitlines()
    assert rows[0].startswith("dims,r,m,trials,success_rate")
    assert rows[1].startswith("7x7x11,2,")


def test_oracle_check():
    assert oracle_check(make_shape(40)) <= 1e-12
    assert oracle_check(make_nd_shape((5, 6, 4))) <= 1e-12
