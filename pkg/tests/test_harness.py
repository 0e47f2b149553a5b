import csv
import json
import os

import numpy as np
import pytest

from stamp.errors import ConfigError, DimensionError, ParameterError
from stamp.harness import cli, cluster_modes, load_config, run_experiment
from stamp.harness import io as sio
from stamp.harness.config import from_dict
from stamp.svgd import RunTrace

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def config(name, **overrides):
    return load_config(os.path.join(CONFIGS, f"{name}.json"), {"output": "", **overrides})


def gm_doc(**kw):
    doc = {"domain": "gaussian_mixture", "n": 20, "inference": {"svgd_iterations": 30, "sgd_iterations": 5}}
    doc.update(kw)
    return doc


# -- configuration ------------------------------------------------------------

@pytest.mark.parametrize("doc, pointer", [
    ({"domain": "chess"}, "/domain"),
    (gm_doc(n=0), "/n"),
    (gm_doc(inference={"step_size": -1.0}), "/inference/step_size"),
    (gm_doc(inference={"momentum": 0.9}), "/inference"),
    (gm_doc(colour="red"), ""),
    ({"n": 5}, ""),
    (gm_doc(init={"low": [0.0]}), "/init"),
])
def test_config_errors_carry_json_pointers(doc, pointer):
    with pytest.raises(ConfigError) as info:
        from_dict(doc)
    assert info.value.pointer == pointer


def test_bad_spec_and_init_ranges_are_config_errors():
    with pytest.raises(ConfigError) as info:
        run_experiment(from_dict(gm_doc(spec={"sigma": -1.0})))
    assert info.value.pointer == "/spec"
    with pytest.raises(ConfigError) as info:
        run_experiment(from_dict(gm_doc(init={"low": [1.0], "high": [0.0]})))
    assert info.value.pointer == "/init"


def test_overrides_and_round_trip():
    cfg = config("billiards", seed=7, n=12, sgd_iterations=3)
    assert (cfg.seed, cfg.n, cfg.inference.sgd_iterations) == (7, 12, 3)
    again = from_dict(cfg.to_dict())
    assert again == cfg


def test_shipped_configs_validate():
    for name in ("gaussian_mixture", "billiards", "pusher", "pickplace"):
        assert config(name).domain == name


# -- runs and outputs ---------------------------------------------------------

def read_dir(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d)) if f != "timing.csv"}


def test_seeded_runs_are_byte_identical_across_workers(tmp_path):
    cfg = from_dict(gm_doc(seed=3))
    run_experiment(cfg, workers=1, output=str(tmp_path / "a"))
    run_experiment(cfg, workers=1, output=str(tmp_path / "b"))
    run_experiment(cfg, workers=3, output=str(tmp_path / "c"))
    a, b, c = (read_dir(tmp_path / x) for x in "abc")
    assert set(a) == {"cost_curve.csv", "modes.csv", "particles_final.json", "trace.jsonl"}
    assert a == b == c


def test_output_files_are_consistent(tmp_path):
    res = run_experiment(from_dict(gm_doc()), output=str(tmp_path))
    with open(tmp_path / "modes.csv") as fh:
        modes = list(csv.DictReader(fh))
    assert len(modes) == len(res.modes)
    assert sum(int(r["count"]) for r in modes) == 20
    with open(tmp_path / "cost_curve.csv") as fh:
        curve = list(csv.DictReader(fh))
    lines = (tmp_path / "trace.jsonl").read_text().splitlines()
    assert len(curve) == len(lines) == len(res.traces[0][1].records)
    assert all(json.loads(line)["schema_version"] == 1 for line in lines)
    with open(tmp_path / "timing.csv") as fh:
        assert len(list(csv.reader(fh))) == len(curve) + 1


def test_particles_round_trip(tmp_path):
    res = run_experiment(from_dict(gm_doc()), output=str(tmp_path))
    data = sio.read_particles(tmp_path / "particles_final.json")
    np.testing.assert_allclose(data["theta"], res.final.theta, rtol=1e-12, atol=0)
    np.testing.assert_allclose(data["costs"], res.costs, rtol=1e-12, atol=0)
    assert data["plans"] == res.plans


def test_empty_trace_writes_headers_only(tmp_path):
    res = run_experiment(from_dict(gm_doc()))
    res.traces = [("main", RunTrace())]
    res.modes = []
    sio.export_trace(res, tmp_path)
    assert (tmp_path / "cost_curve.csv").read_text() == "iteration,phase,mean_cost,min_cost\n"
    assert (tmp_path / "modes.csv").read_text() == "plan,count,best_cost,best_particle,solved\n"
    assert (tmp_path / "trace.jsonl").read_text() == ""


def test_read_particles_rejects_bad_files(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(sio.OutputError):
        sio.read_particles(p)
    p.write_text(json.dumps({"schema_version": 5}))
    with pytest.raises(sio.OutputError):
        sio.read_particles(p)


def test_cluster_modes_buckets():
    theta = np.array([[0.0], [1.0], [2.0], [3.0], [4.0]])
    costs = np.array([0.5, 0.1, 0.2, 0.3, 0.05])
    buckets = cluster_modes(theta, costs, lambda t: "even" if t[0] % 2 == 0 else "odd", threshold=0.15)
    assert [(b.plan, b.count, b.best_particle, b.solved) for b in buckets] == [
        ("even", 3, 4, True), ("odd", 2, 1, True)]
    with pytest.raises(ParameterError):
        cluster_modes(theta, costs, str)
    with pytest.raises(DimensionError):
        cluster_modes(theta, costs[:3], str, threshold=1.0)


def test_single_particle_billiards_run_has_one_mode():
    res = run_experiment(config("billiards", n=1, svgd_iterations=3, sgd_iterations=2))
    assert res.ok
    assert len(res.modes) == 1 and res.modes[0].count == 1


def test_gaussian_mixture_run_finds_both_modes():
    res = run_experiment(config("gaussian_mixture"))
    trace = res.traces[0][1]
    assert np.mean(res.costs) < trace.records[0].mean_cost
    assert len(res.modes) == 2
    assert sum(b.count for b in res.modes) == 100


@pytest.mark.parametrize("name", ["gaussian_mixture", "pickplace"])
def test_refinement_does_not_raise_mean_cost(name):
    res = run_experiment(config(name))
    for _, trace in res.traces:
        if trace.switch_iteration is None:
            continue
        assert trace.mean_costs[-1] <= trace.mean_costs[trace.switch_iteration] + 1e-12


# -- command line -------------------------------------------------------------

def write_cfg(tmp_path, doc):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_cli_run_and_modes(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", write_cfg(tmp_path, gm_doc()), "--output", str(out), "--seed", "1"]) == 0
    text = capsys.readouterr().out
    assert "gaussian_mixture: 20 particles" in text
    assert cli.main(["modes", str(out / "particles_final.json"), "--reevaluate"]) == 0
    assert "best_cost" in capsys.readouterr().out


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["run", write_cfg(tmp_path, {"domain": "gaussian_mixture", "n": -1})]) == 1
    assert "/n" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "missing.json")]) == 1


def test_cli_runtime_error_exit_code(tmp_path, capsys):
    assert cli.main(["modes", str(tmp_path / "missing.json")]) == 2
    doc = gm_doc(inference={"step_size": 1e300, "svgd_iterations": 5, "sgd_iterations": 0})
    code = cli.main(["run", write_cfg(tmp_path, doc), "--output", str(tmp_path / "o")])
    assert code in (0, 2)  # huge steps either stay finite after clipping or abort cleanly
    if code == 2:
        assert (tmp_path / "o" / "trace.jsonl").exists()


def test_cli_gradcheck(capsys):
    assert cli.main(["gradcheck", "gaussian_mixture", "--count", "3"]) == 0
    assert "3/3 checked" in capsys.readouterr().out
    assert cli.main(["gradcheck", "programs", "--count", "4"]) == 0


def test_cli_fit_dmp(tmp_path, capsys):
    t = np.linspace(0, 1, 201)
    s = 10 * t ** 3 - 15 * t ** 4 + 6 * t ** 5
    demos = {"dt": 0.005, "tau": 1.0, "n_basis": 12,
             "primitives": {"E": [np.stack([0.3 * s, 0 * s], axis=1).tolist()]}}
    path = tmp_path / "demos.json"
    path.write_text(json.dumps(demos))
    out = tmp_path / "bank.json"
    assert cli.main(["fit-dmp", str(path), "--out", str(out)]) == 0
    bank = json.loads(out.read_text())
    assert "E" in json.dumps(bank)
    path.write_text("[]")
    assert cli.main(["fit-dmp", str(path)]) == 1
