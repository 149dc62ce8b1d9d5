"""Command line interface: ``dualrf <command> --config run.json [overrides]``.

Settings resolve as command-line flags, then ``DUALRF_*`` environment
variables, then the config file, then built-in defaults. Paths in the
config are relative to the config file. Every command writes its artifacts
into the output directory; failures print one JSON line on stderr and exit
with status 1.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .anamorphosis import SphereTransform, fit_sphere_transform
from .gaussian import CovarianceModel
from .pipeline import (Realization, calibrate_latent, etype_and_variance,
                       feature_importance_maps, fit_models, fit_variogram_range, ingest_grids,
                       model_arrays, run_variography, simulate_ensemble, success_rate_curve)
from .spherefield import SphereField
from .svm import FeatureScaler, NeighborhoodSpec
from .synthetic import make_synthetic

DEFAULTS = {
    "features": [],
    "feature_names": [],
    "samples": "samples.csv",
    "training": "training.csv",
    "sites": None,
    "out_dir": ".",
    "seed": 0,
    "nreal": 100,
    "threads": 1,
    "response": {"lo": 100.0, "hi": 500.0},
    "svm": {"cost": 1.0, "max_samples": 400, "max_radius": None, "min_positive": 5},
    "variography": {"lag": 10.0, "nlags": 6},
    "latent": {"kind": "exponential", "range": None, "calibration_lags": 3,
               "calibration_realizations": 4, "range_bounds": [1.0, 150.0]},
    "offset": {"kind": "exponential", "range": None},
    "transform": {"radial_law": "chi", "ppmt_iters": 30},
    "simulation": {"max_neighbors": 16},
    "outputs": {"pgm": True},
    "synthetic": {},
}

CARRIED = ("nreal", "threads", "response", "svm", "variography", "latent", "offset",
           "transform", "simulation", "outputs")
ENV_PREFIX = "DUALRF_"
OVERRIDES = {"seed": int, "nreal": int, "threads": int, "out_dir": str}


class CLIError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(message)


# ---------------------------------------------------------------- configuration

def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


class Run:
    """Resolved settings plus path helpers for one command."""

    def __init__(self, args, env=None):
        env = os.environ if env is None else env
        cfg_path = args.config or env.get(ENV_PREFIX + "CONFIG")
        self.base = Path(".")
        user = {}
        if cfg_path:
            p = Path(cfg_path)
            if not p.exists():
                raise CLIError(f"missing input: config file {p}")
            user = json.loads(p.read_text())
            self.base = p.parent
        cfg = _merge(DEFAULTS, user)
        if "out_dir" in user:
            cfg["out_dir"] = str(self.base / user["out_dir"])
        for key, kind in OVERRIDES.items():
            val = env.get(ENV_PREFIX + key.upper())
            if val is not None:
                cfg[key] = kind(val)
            flag = getattr(args, key, None)
            if flag is not None:
                cfg[key] = kind(flag)
        self.cfg = cfg
        self.out = Path(cfg["out_dir"])

    def input(self, key, what=None):
        val = self.cfg.get(key)
        if not val:
            raise CLIError(f"missing input: {what or key} (config key {key!r})")
        path = self.base / val
        if not path.exists():
            raise CLIError(f"missing input: {what or key} file {path}")
        return path

    def artifact(self, name, what=None):
        path = self.out / name
        if not path.exists():
            raise CLIError(f"missing input: {what or name} ({path}); run the earlier step first")
        return path

    def features(self):
        paths = self.cfg.get("features") or []
        if not paths:
            raise CLIError("missing input: feature grids (config key 'features')")
        for p in paths:
            if not (self.base / p).exists():
                raise CLIError(f"missing input: feature grid {self.base / p}")
        return ingest_grids([self.base / p for p in paths], self.cfg.get("feature_names"))


# ---------------------------------------------------------------- commands

def cmd_synth(run):
    seed = int(run.cfg["seed"])
    data = make_synthetic(seed, **run.cfg["synthetic"])
    out = run.out
    (out / "features").mkdir(parents=True, exist_ok=True)
    names = [f"f{k + 1}" for k in range(data.p)]
    for k, name in enumerate(names):
        io.write_grid(out / "features" / f"{name}.txt", data.features[k], data.domain)
    io.write_grid(out / "truth_class.txt", data.true_class(), data.domain)
    io.write_table(out / "samples.csv", ["x", "y", "value"],
                   [(float(x), float(y), float(v))
                    for (x, y), v in zip(data.sample_locations, data.sample_values)])
    io.write_table(out / "training.csv", ["x", "y"],
                   [(float(x), float(y)) for x, y in data.training_locations])
    io.write_table(out / "sites.csv", ["x", "y", "resource"],
                   [(float(x), float(y), float(r))
                    for (x, y), r in zip(data.site_locations, data.site_resources)])
    cfg = {"features": [f"features/{n}.txt" for n in names], "feature_names": names,
           "samples": "samples.csv", "training": "training.csv", "sites": "sites.csv",
           "out_dir": ".", "seed": seed}
    # downstream settings given to synth carry over to the generated config
    cfg.update({k: run.cfg[k] for k in CARRIED if k in run.cfg})
    io.dump_json(out / "config.json", cfg)
    return {"config": str(out / "config.json")}


def cmd_fit(run):
    cfg = run.cfg
    stack = run.features()
    samples = io.read_table(run.input("samples", "samples file"), ("x", "y", "value"))
    train = io.read_table(run.input("training", "training locations file"), ("x", "y"))
    s = cfg["svm"]
    spec = NeighborhoodSpec(int(s["max_samples"]),
                            np.inf if s.get("max_radius") is None else float(s["max_radius"]),
                            int(s["min_positive"]))
    res = fit_models(stack, np.column_stack([samples["x"], samples["y"]]), samples["value"],
                     np.column_stack([train["x"], train["y"]]), cfg["response"]["lo"],
                     cfg["response"]["hi"], spec, float(s["cost"]))
    run.out.mkdir(parents=True, exist_ok=True)
    io.write_models(run.out / "models.csv", res.models)
    io.write_table(run.out / "rejected.csv", ["x", "y", "reason"],
                   [(float(l[0]), float(l[1]), r) for l, r in res.rejected])
    io.dump_json(run.out / "scaler.json", res.scaler.to_dict())
    return {"models": len(res.models), "rejected": len(res.rejected)}


def _models(run):
    return io.read_models(run.artifact("models.csv", "fitted models"))


def cmd_variography(run):
    v = run.cfg["variography"]
    models = _models(run)
    rep = run_variography(models, float(v["lag"]), int(v["nlags"]))
    t = rep.sphere_cov
    io.write_table(run.out / "sphere_covariance.csv", ["h", "cs", "npairs"],
                   [(float(h), float(c), int(n)) for h, c, n in zip(t.h, t.value, t.npairs)])
    g, gs = rep.offset_variogram, rep.score_variogram
    io.write_table(run.out / "offset_variogram.csv", ["h", "gamma", "gamma_scores", "npairs"],
                   [(float(h), float(a), float(b), int(n))
                    for h, a, b, n in zip(g.h, g.value, gs.value, g.npairs)])
    rows = []
    for k, (vals, prob) in enumerate(rep.component_cdfs):
        rows += [(k + 1, float(x), float(q)) for x, q in zip(vals, prob)]
    io.write_table(run.out / "component_cdfs.csv", ["feature", "value", "probability"], rows)
    off = run.cfg["offset"]
    if off.get("range"):
        model = CovarianceModel(off["kind"], float(off["range"]))
    else:
        model = fit_variogram_range(gs, off["kind"])
    io.dump_json(run.out / "offset_model.json", model.to_dict())
    return {"mean_inner": rep.mean_inner, "offset_range": model.range}


def cmd_calibrate_latent(run):
    cfg = run.cfg
    models = _models(run)
    _, normals, _ = model_arrays(models)
    tr = cfg["transform"]
    transform = fit_sphere_transform(normals, int(tr["ppmt_iters"]), tr["radial_law"],
                                     seed=int(cfg["seed"]))
    (run.out / "transform.json").write_text(transform.dumps() + "\n")
    lat = cfg["latent"]
    if lat.get("range"):
        model = CovarianceModel(lat["kind"], float(lat["range"]))
        info = {"model": model.to_dict(), "calibrated": False}
    else:
        v = cfg["variography"]
        rep = run_variography(models, float(v["lag"]), int(v["nlags"]))
        cal = calibrate_latent(rep, run.features().domain, transform, float(v["lag"]),
                               lat["kind"], int(lat["calibration_lags"]),
                               int(lat["calibration_realizations"]),
                               tuple(lat["range_bounds"]), seed=int(cfg["seed"]))
        info = {"model": cal.model.to_dict(), "calibrated": True, "misfit": cal.misfit,
                "lags": cal.lags.tolist(), "target": cal.target.tolist(),
                "simulated": cal.simulated.tolist()}
    io.dump_json(run.out / "latent_model.json", info)
    return {"latent_range": info["model"]["range"]}


def cmd_simulate(run):
    cfg = run.cfg
    models = _models(run)
    transform = SphereTransform.loads(run.artifact("transform.json", "sphere transform")
                                      .read_text())
    latent = CovarianceModel.from_dict(
        io.load_json(run.artifact("latent_model.json", "latent model"))["model"])
    offset = CovarianceModel.from_dict(io.load_json(run.artifact("offset_model.json",
                                                                 "offset model")))
    domain = run.features().domain
    nreal, seed = int(cfg["nreal"]), int(cfg["seed"])
    reals = simulate_ensemble(models, transform, latent, offset, domain, nreal, seed,
                              max_neighbors=int(cfg["simulation"]["max_neighbors"]),
                              threads=int(cfg["threads"]))
    p = transform.p
    orient = np.array([r.orientation.values for r in reals]).reshape(nreal, *domain.shape, p)
    offs = np.array([r.offset for r in reals]).reshape(nreal, *domain.shape)
    np.save(run.out / "orientations.npy", orient)
    np.save(run.out / "offsets.npy", offs)
    io.write_table(run.out / "realization_seeds.csv", ["index", "seed"],
                   [(i, r.seed) for i, r in enumerate(reals)])
    return {"nreal": nreal}


def _load_realizations(run, domain):
    orient = np.load(run.artifact("orientations.npy", "simulated orientations"))
    offs = np.load(run.artifact("offsets.npy", "simulated offsets"))
    seeds = io.read_table(run.artifact("realization_seeds.csv", "realization seeds"))
    return [Realization(SphereField(domain, o), b, None, int(s))
            for o, b, s in zip(orient, offs, np.atleast_1d(seeds["seed"]))]


def cmd_evaluate(run):
    from .pipeline import evaluate_svm_rf

    stack = run.features()
    scaler = FeatureScaler.from_dict(io.load_json(run.artifact("scaler.json", "feature scaler")))
    z = stack.standardized(scaler)
    reals = _load_realizations(run, stack.domain)
    if not reals:
        raise CLIError("no realizations to evaluate")
    for r in reals:
        r.classification = evaluate_svm_rf(r, z, stack.mask)
    classes = np.array([r.classification for r in reals])
    np.save(run.out / "classes.npy", classes)
    etype, var = etype_and_variance(classes)
    io.write_grid(run.out / "etype.txt", etype, stack.domain)
    io.write_grid(run.out / "variance.txt", var, stack.domain)
    comps, mean_off = feature_importance_maps(reals)
    for name, comp in zip(stack.names, comps):
        io.write_grid(run.out / f"importance_{name}.txt", comp, stack.domain, stack.mask)
    io.write_grid(run.out / "mean_offset.txt", mean_off, stack.domain, stack.mask)
    if run.cfg["outputs"].get("pgm"):
        io.write_pgm(run.out / "etype.pgm", etype, 0.0, 1.0)
        io.write_pgm(run.out / "variance.pgm", var, 0.0, float(np.nanmax(var)) or 1.0)
    return {"nreal": len(reals), "mean_etype": float(np.nanmean(etype))}


def cmd_validate(run):
    sites_path = run.input("sites", "validation sites file")
    sites = io.read_table(sites_path, ("x", "y"))
    etype, domain, _ = io.read_grid(run.artifact("etype.txt", "E-type map"))
    locs = np.column_stack([sites["x"], sites["y"]])
    curve = success_rate_curve(etype, domain, locs, sites.get("resource"))
    io.write_table(run.out / "success_curve.csv", ["area", "sites", "resource"],
                   list(zip(curve.area.tolist(), curve.sites.tolist(),
                            curve.resource.tolist())))
    summary = {"auc": curve.auc, "sites_at_10pct": curve.capture_at(0.1),
               "n_sites": int(np.sum(domain.cell_index(locs) >= 0))}
    io.dump_json(run.out / "validation.json", summary)
    return summary


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "variography": cmd_variography,
    "calibrate-latent": cmd_calibrate_latent,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "validate": cmd_validate,
}


def build_parser():
    parser = _Parser(prog="dualrf", description="Prospectivity mapping with dual random fields")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--nreal", type=int)
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--threads", type=int)
    return parser


def main(argv=None, env=None):
    """Run one command; returns the process exit status."""
    command = None
    try:
        args = build_parser().parse_args(argv)
        command = args.command
        if command is None:
            raise CLIError("no command given; choose one of " + ", ".join(COMMANDS))
        run = Run(args, env)
        run.out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[command](run)
        print(json.dumps({"command": command, "status": "ok", **result}, sort_keys=True))
        return 0
    except Exception as err:  # reported as one machine-readable line
        print(json.dumps({"command": command, "status": "error",
                          "error": type(err).__name__, "message": str(err)}, sort_keys=True),
              file=sys.stderr)
        return 1


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
