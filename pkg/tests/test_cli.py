import copy
import csv
import json

import pytest

from geum.cli import build_parser, fmt, main
from geum.config import SCHEMA, bundled_scenarios, load_config
from geum.errors import ConfigurationError, DomainError


def small_config(tmp_path, name, fname="cfg.json", **sections):
    raw = copy.deepcopy(load_config(name).raw)
    raw["solver"].update(M=3000, N=10)
    for sec, block in sections.items():
        raw.setdefault(sec, {}).update(block)
    path = tmp_path / fname
    path.write_text(json.dumps(raw))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_bundled_scenarios_load():
    names = bundled_scenarios()
    assert "exp_linear_unconstrained" in names
    for n in names:
        sc = load_config(n)
        assert sc.solver["seed"] >= 0 and len(sc.config_hash) == 64


def test_config_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(str(tmp_path / "missing.toml"))
    bad = tmp_path / "bad.toml"
    bad.write_text("problem = [")
    with pytest.raises(ConfigurationError):
        load_config(str(bad))
    raw = copy.deepcopy(load_config("log_unconstrained").raw)
    raw["problem"]["utility"] = "quadratic"
    (tmp_path / "u.json").write_text(json.dumps(raw))
    with pytest.raises(ConfigurationError, match="schema"):
        load_config(str(tmp_path / "u.json"))
    raw = copy.deepcopy(load_config("power_kappa_unconstrained").raw)
    raw["problem"]["gamma"] = 2.0
    (tmp_path / "g.json").write_text(json.dumps(raw))
    with pytest.raises(DomainError):
        load_config(str(tmp_path / "g.json"))


def test_overrides():
    sc = load_config("exp_linear_unconstrained", seed=5, backend="tree")
    assert sc.solver["seed"] == 5 and sc.solver["backend"] == "tree"
    assert SCHEMA["required"] == ["problem", "market", "solver"]


def test_fmt_round_trips():
    x = 0.1 + 0.2
    assert float(fmt(x)) == x
    assert fmt(3) == "3" and fmt(True) == "true"


def test_solve_is_deterministic(tmp_path):
    cfg = small_config(tmp_path, "exp_linear_unconstrained")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["solve", "--config", cfg, "--out", str(a)]) == 0
    assert main(["solve", "--config", cfg, "--out", str(b)]) == 0
    for f in ("summary.csv", "solution.csv", "strategy.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    ra, rb = json.loads((a / "run.json").read_text()), json.loads((b / "run.json").read_text())
    ra["metadata"].pop("wall_clock_seconds")
    rb["metadata"].pop("wall_clock_seconds")
    assert ra == rb
    c = tmp_path / "c"
    assert main(["solve", "--config", cfg, "--out", str(c), "--seed", "99"]) == 0
    assert read_csv(c / "summary.csv")[0]["Y0"] != read_csv(a / "summary.csv")[0]["Y0"]


def test_solve_tree_backend(tmp_path):
    cfg = small_config(tmp_path, "log_unconstrained")
    out = tmp_path / "t"
    assert main(["solve", "--config", cfg, "--out", str(out), "--backend", "tree"]) == 0
    row = read_csv(out / "summary.csv")[0]
    assert row["backend"] == "tree" and row["M"] == "0"
    assert not (out / "strategy.csv").exists()


def test_config_error_writes_nothing(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("x = 1")
    out = tmp_path / "o"
    assert main(["solve", "--config", str(bad), "--out", str(out)]) == 2
    assert not out.exists()
    assert "configuration error" in capsys.readouterr().err
    cfg = small_config(tmp_path, "log_unconstrained")
    assert main(["verify", "--config", cfg, "--out", str(out), "--backend", "tree"]) == 2
    assert main(["gexp", "--config", cfg, "--out", str(out), "--payoff", "nope"]) == 2
    assert main(["gexp", "--config", cfg, "--out", str(out), "--generator", "kappa:"]) == 2
    assert not out.exists()


def test_numeric_failure_exit_3(tmp_path):
    cfg = small_config(tmp_path, "exp_linear_unconstrained", solver={"y_bound": 1e-3})
    out = tmp_path / "o"
    assert main(["solve", "--config", cfg, "--out", str(out), "--strict"]) == 3
    assert json.loads((out / "error.json").read_text())["error"] == "QuadraticBlowupError"


def test_verify_and_compare(tmp_path):
    cfg = small_config(tmp_path, "exp_kappa_unconstrained")
    v, c = tmp_path / "v", tmp_path / "c"
    assert main(["verify", "--config", cfg, "--out", str(v), "--strict"]) == 0
    drift = json.loads((v / "drift.json").read_text())
    assert drift["optimal"]["verdict"] == "martingale"
    assert len(read_csv(v / "drift.csv")) == 10
    assert main(["compare", "--config", cfg, "--out", str(c)]) == 0
    ranking = read_csv(c / "ranking.csv")
    assert ranking[0]["strategy"] == "optimal"
    t = tmp_path / "tab"
    assert main(["tables", str(v), str(c), "--out", str(t)]) == 0
    rows = read_csv(t / "tables.csv")
    assert len(rows) == len(ranking)
    assert all(r["max_abs_drift"] != "nan" for r in rows)


def test_tables_without_artifacts(tmp_path):
    assert main(["tables", str(tmp_path), "--out", str(tmp_path / "t")]) == 2


def test_gexp_outputs(tmp_path):
    cfg = small_config(tmp_path, "exp_kappa_unconstrained")
    out = tmp_path / "g"
    rep = tmp_path / "rep.json"
    assert main(["gexp", "--config", cfg, "--out", str(out), "--generator", "kappa:0.5",
                 "--payoff", "W_T", "--payoff", "1.5", "--report", str(rep)]) == 0
    rows = {r["payoff"]: r for r in read_csv(out / "gexp.csv")}
    assert float(rows["1.5"]["value"]) == 1.5
    assert float(rows["W_T"]["girsanov_sup_oracle"]) == pytest.approx(0.5)
    assert json.loads(rep.read_text())["generator"] == {"kind": "kappa", "kappa": 0.5}


def test_axioms_broken_generator(tmp_path):
    cfg = small_config(tmp_path, "kappa_broken_domination")
    out = tmp_path / "a"
    assert main(["axioms", "--config", cfg, "--out", str(out)]) == 0
    report = json.loads((out / "axioms.json").read_text())
    assert report["validation"]["A1"] is False
    assert main(["axioms", "--config", cfg, "--out", str(out), "--strict"]) == 3


def test_parser_requires_config():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["solve"])
