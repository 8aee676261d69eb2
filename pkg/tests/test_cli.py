import json
import os

import pytest

from sddelab import cli, config
from sddelab.config import ConfigError

GAUSS = """
[model]
hurst = 0.75
horizon = 1.0
delay = 1.0
eta = 0
sigma = 1
b = 0
scan_points = 101

[simulation]
paths = 3000
steps_per_delay = 16
seed = 11

[verification]
t_early = 0.5
min_bin_count = 200
"""

TANH = """
[model]
hurst = 0.75
horizon = 2.0
delay = 1.0
sigma = 1 + 0.25*tanh(x)
b = 0.1*sin(x)
scan_points = 2001

[simulation]
paths = 3000
steps_per_delay = 64
seed = 5

[verification]
t_early = 0.5
t_late = 1.5
n_values = 8, 16, 32
kh_paths = 200
"""


@pytest.fixture
def cfgfile(tmp_path):
    def make(text, name="run.ini"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return make


# --- config -------------------------------------------------------------------

def test_config_parses_and_hashes(cfgfile):
    cfg = config.load(cfgfile(TANH))
    assert cfg.model.sigma == "1 + 0.25*tanh(x)"
    assert cfg.verification.n_values == [8, 16, 32]
    assert cfg.model.lambda_ is None
    again = config.load(cfgfile(TANH, "b.ini"))
    assert cfg.digest() == again.digest()
    other = config.load(cfgfile(TANH), overrides=["simulation.seed=6"])
    assert other.digest() != cfg.digest()
    parallel = config.load(cfgfile(TANH), overrides=["simulation.workers=8"])
    assert parallel.digest() == cfg.digest()


@pytest.mark.parametrize("text, msg", [
    ("[model]\nhurst = 0.4\n", "hurst"),
    ("[model]\ndelay = 0\n", "delay"),
    ("[simulation]\npaths = 50\n", "paths"),
    ("[bogus]\na = 1\n", "unknown section"),
    ("[model]\nfoo = 1\n", "unknown key"),
    ("[simulation]\npaths = many\n", "cannot parse"),
    ("not an ini", "section"),
])
def test_config_validation(text, msg, cfgfile):
    with pytest.raises(ConfigError, match=msg):
        config.load(cfgfile(text))


def test_config_model_errors(cfgfile):
    cfg = config.load(cfgfile(TANH + "\n"), overrides=["model.lambda=0.9"])
    with pytest.raises(ConfigError, match="0.9"):
        cfg.build_model()
    cfg = config.load(cfgfile(TANH), overrides=["model.sigma=1 + y"])
    with pytest.raises(ConfigError, match="unknown identifier"):
        cfg.build_model()


# --- commands -------------------------------------------------------------------

def test_check_lemmas_exit_codes(tmp_path, capsys):
    assert cli.main(["check-lemmas", "--h", "0.75", "--trials", "10000", "--tol", "1e-8",
                     "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS lemma_ap1" in out and "PASS lemma_ap2" in out
    assert cli.main(["check-lemmas", "--h", "0.4", "--out", str(tmp_path)]) == 2
    assert cli.main(["check-lemmas", "--tol", "0", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as e:
        cli.main(["check-lemmas", "--h", "abc"])
    assert e.value.code == 2


def test_env_default_output_dir(tmp_path, monkeypatch):
    target = tmp_path / "envout"
    monkeypatch.setenv(cli.ENV_OUT, str(target))
    assert cli.main(["check-lemmas", "--trials", "100"]) == 0
    assert (target / "manifest.json").exists()


def test_verify_early_gaussian_collapses(tmp_path, cfgfile, capsys):
    out = tmp_path / "o"
    rc = cli.main(["verify-early", cfgfile(GAUSS), "--t", "0.5", "--out", str(out), "--svg"])
    assert rc == 0
    rep = json.loads((out / "early.json").read_text())
    assert rep["early_bound"]["extra"]["collapsed"] is True
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["checks"]) == {"der0r", "gf_bracket", "early_two_sided_bound"}
    assert (out / "density.svg").read_text().startswith("<svg")
    header = (out / "density.csv").read_text().splitlines()[0]
    assert header == "x,p_nv,p_kde,lower,upper"
    assert (out / "gf.csv").read_text().splitlines()[0] == "bin_center,gf_hat,stderr,n_in_bin"
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert len(lines) == 4


def test_verify_early_check_selection(tmp_path, cfgfile):
    out = tmp_path / "o"
    rc = cli.main(["verify-early", cfgfile(GAUSS), "--out", str(out),
                   "--set", "verification.checks=der0r"])
    assert rc == 0
    man = json.loads((out / "manifest.json").read_text())
    assert list(man["checks"]) == ["der0r"]
    assert cli.main(["verify-early", cfgfile(GAUSS), "--out", str(out),
                     "--set", "verification.checks=nonsense"]) == 2


def test_declared_lambda_too_large(tmp_path, cfgfile, capsys):
    rc = cli.main(["verify-early", cfgfile(TANH), "--out", str(tmp_path),
                   "--set", "model.lambda=0.9"])
    assert rc == 2
    assert "0.9" in capsys.readouterr().err


def test_verify_early_rejects_late_time(tmp_path, cfgfile):
    assert cli.main(["verify-early", cfgfile(TANH), "--t", "1.5", "--out", str(tmp_path)]) == 2


def test_verify_late(tmp_path, cfgfile):
    out = tmp_path / "late"
    rc = cli.main(["verify-late", cfgfile(TANH), "--t", "1.5", "--out", str(out), "--paths", "5000"])
    assert rc == 0
    feas = json.loads((out / "feasibility.json").read_text())
    assert feas["n_feasible"] > 0 and feas["best"]["c3"] is not None
    assert feas["constraints"]["feasible"] is True
    assert (out / "j1_bracket.csv").read_text().splitlines()[0] == \
        "N,n,v_n_min,v_n_max,bracket_lo,bracket_hi"
    assert (out / "late_floor.csv").read_text().splitlines()[0] == "x,p_kde,floor,margin"
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["checks"]) == set(cli.LATE_CHECKS)


def test_verify_late_bad_partition(tmp_path, cfgfile):
    rc = cli.main(["verify-late", cfgfile(TANH), "--out", str(tmp_path),
                   "--set", "verification.n_values=7"])
    assert rc == 2


def test_violation_exit_code(tmp_path, cfgfile):
    # oversized c1 breaks the J1 half-peak floor and the constraint ledger
    rc = cli.main(["verify-late", cfgfile(TANH), "--out", str(tmp_path), "--paths", "1000",
                   "--set", "verification.c1=1.0",
                   "--set", "verification.checks=j1_bracket,kh_constraints"])
    assert rc == 1
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["passed"] is False


def test_kh_constants(tmp_path, cfgfile, capsys):
    assert cli.main(["kh-constants", cfgfile(TANH), "--x", "2", "--out", str(tmp_path)]) == 0
    plan = json.loads((tmp_path / "kh_plan.json").read_text())
    assert plan["N"] == 46 and plan["feasible"]
    assert plan["lower_bounds"]["log_chained"] >= plan["lower_bounds"]["log_simplified"]


def test_simulate_and_gf_and_density(tmp_path, cfgfile):
    assert cli.main(["simulate", cfgfile(TANH), "--out", str(tmp_path / "s"),
                     "--dump-paths", "3"]) == 0
    rows = (tmp_path / "s" / "paths.csv").read_text().splitlines()
    assert rows[0] == "path_id,t,X_t" and len(rows) == 1 + 3 * (64 + 128 + 1)
    assert cli.main(["gf", cfgfile(TANH), "--out", str(tmp_path / "g")]) == 0
    assert cli.main(["density", cfgfile(GAUSS), "--out", str(tmp_path / "d")]) == 0


def _outputs(d):
    return {f: (d / f).read_bytes() for f in sorted(os.listdir(d))
            if f.endswith((".csv", ".json"))}


@pytest.mark.parametrize("cmd, text", [("verify-early", GAUSS), ("verify-late", TANH),
                                       ("simulate", TANH)])
def test_byte_identical_reruns(tmp_path, cfgfile, cmd, text):
    path = cfgfile(text)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main([cmd, path, "--out", str(a), "--workers", "1"]) == 0
    assert cli.main([cmd, path, "--out", str(b), "--workers", "3"]) == 0
    oa, ob = _outputs(a), _outputs(b)
    assert oa.keys() == ob.keys() and len(oa) >= 3
    for k in oa:
        if k == "manifest.json":
            ma, mb = json.loads(oa[k]), json.loads(ob[k])
            # the worker count is recorded in the config echo; everything else matches
            ma["config"]["simulation"].pop("workers")
            mb["config"]["simulation"].pop("workers")
            assert ma == mb
        else:
            assert oa[k] == ob[k], k
    c = tmp_path / "c"
    assert cli.main([cmd, path, "--out", str(c), "--workers", "1"]) == 0
    assert _outputs(c) == oa
