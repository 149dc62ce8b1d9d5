import argparse
import json
import shutil

import numpy as np
import pytest

from dualrf import io
from dualrf.cli import Run, main

SMALL = {"seed": 2, "nreal": 2,
         "synthetic": {"nx": 40, "ny": 40, "n_samples": 900, "n_training": 20, "n_sites": 15},
         "svm": {"max_samples": 300}, "variography": {"lag": 5.0, "nlags": 5}}
CHAIN = ["fit", "variography", "calibrate-latent", "simulate", "evaluate", "validate"]


def run_cli(capsys, *argv, env=None):
    code = main(list(argv), env={} if env is None else env)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "run.json").write_text(json.dumps({**SMALL, "out_dir": "data"}))
    assert main(["synth", "--config", str(d / "run.json")], env={}) == 0
    cfg = str(d / "data" / "config.json")
    for cmd in CHAIN:
        assert main([cmd, "--config", cfg], env={}) == 0, cmd
    return d / "data"


def test_chain_artifacts(workdir):
    for name in ("models.csv", "transform.json", "latent_model.json", "offset_model.json",
                 "orientations.npy", "etype.txt", "variance.txt", "success_curve.csv",
                 "validation.json", "etype.pgm", "importance_f1.txt"):
        assert (workdir / name).exists(), name
    summary = io.load_json(workdir / "validation.json")
    assert 0 <= summary["auc"] <= 1 and summary["n_sites"] == 15
    etype, _, _ = io.read_grid(workdir / "etype.txt")
    assert np.all((etype >= 0) & (etype <= 1))


def test_fit_writes_one_record_per_accepted_location(workdir):
    models = io.read_table(workdir / "models.csv")
    rejected = io.read_table(workdir / "rejected.csv")
    n_rej = len(rejected.get("x", []))
    assert len(models["x"]) + n_rej == SMALL["synthetic"]["n_training"]
    norms = np.linalg.norm(np.column_stack([models[f"s{k}"] for k in (1, 2, 3)]), axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-15)


def test_simulate_is_reproducible_and_thread_independent(workdir, tmp_path, capsys):
    outs = []
    for k, threads in enumerate(("1", "1", "2")):
        shutil.copytree(workdir, tmp_path / str(k))
        code, out, _ = run_cli(capsys, "simulate", "--config", str(tmp_path / str(k) / "config.json"),
                               "--nreal", "2", "--seed", "7", "--threads", threads)
        assert code == 0 and json.loads(out)["nreal"] == 2
        outs.append([(tmp_path / str(k) / f).read_bytes()
                     for f in ("orientations.npy", "offsets.npy", "realization_seeds.csv")])
    assert outs[0] == outs[1] == outs[2]
    assert outs[0][0] != (workdir / "orientations.npy").read_bytes()


def test_validate_without_sites_names_input(workdir, tmp_path, capsys):
    cfg = io.load_json(workdir / "config.json")
    cfg["sites"] = None
    cfg["out_dir"] = str(workdir)
    (tmp_path / "nosites.json").write_text(json.dumps(cfg))
    code, out, err = run_cli(capsys, "validate", "--config", str(tmp_path / "nosites.json"))
    assert code != 0 and out == ""
    msg = json.loads(err.strip())
    assert msg["status"] == "error" and msg["command"] == "validate"
    assert "sites" in msg["message"]


def test_missing_artifacts_and_bad_usage(tmp_path, capsys):
    (tmp_path / "c.json").write_text("{}")
    code, _, err = run_cli(capsys, "simulate", "--config", str(tmp_path / "c.json"))
    assert code == 1 and "models" in json.loads(err)["message"]
    code, _, err = run_cli(capsys, "fit", "--config", str(tmp_path / "absent.json"))
    assert code == 1 and "absent.json" in json.loads(err)["message"]
    code, _, err = run_cli(capsys)
    assert code == 1 and json.loads(err)["error"] == "CLIError"
    code, _, err = run_cli(capsys, "fit", "--bogus")
    assert code == 1 and len(err.strip().splitlines()) == 1


def test_setting_precedence(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"seed": 1, "nreal": 5, "out_dir": "o"}))

    def resolve(env, **flags):
        ns = argparse.Namespace(config=str(tmp_path / "c.json"), seed=None, nreal=None,
                                out_dir=None, threads=None)
        for k, v in flags.items():
            setattr(ns, k, v)
        return Run(ns, env).cfg

    assert resolve({})["seed"] == 1
    assert resolve({})["out_dir"] == str(tmp_path / "o")
    assert resolve({"DUALRF_SEED": "4"})["seed"] == 4
    assert resolve({"DUALRF_SEED": "4"}, seed=9)["seed"] == 9
    assert resolve({"DUALRF_NREAL": "3"})["nreal"] == 3
    assert resolve({})["threads"] == 1
    # the config file itself can come from the environment
    ns = argparse.Namespace(config=None, seed=None, nreal=None, out_dir=None, threads=None)
    assert Run(ns, {"DUALRF_CONFIG": str(tmp_path / "c.json")}).cfg["nreal"] == 5
