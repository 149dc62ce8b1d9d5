"""The full prospectivity chain on a small synthetic dataset, through the CLI.

Equivalent to running ``dualrf synth``, ``fit``, ``variography``,
``calibrate-latent``, ``simulate``, ``evaluate`` and ``validate`` in turn.
The default 50x50 domain with 20 realizations takes well under a minute;
pass ``--full`` for the 100x100, 100-realization setting.

    python3 demos/synthetic_mpm.py [out_dir] [--full]
"""
import json
import sys
from pathlib import Path

from dualrf.cli import main

SMALL = {"nreal": 20, "synthetic": {"nx": 50, "ny": 50, "n_samples": 1200,
                                    "n_training": 25, "n_sites": 20},
         "svm": {"max_samples": 300}, "variography": {"lag": 5.0, "nlags": 6}}


def run(out, full=False):
    out.mkdir(parents=True, exist_ok=True)
    cfg = {"out_dir": "run", "seed": 0, **({} if full else SMALL)}
    (out / "synth.json").write_text(json.dumps(cfg))
    if main(["synth", "--config", str(out / "synth.json")]):
        return 1
    config = str(out / "run" / "config.json")
    for cmd in ("fit", "variography", "calibrate-latent", "simulate", "evaluate", "validate"):
        if main([cmd, "--config", config]):
            return 1
    print(f"E-type, variance and success curve are in {out / 'run'}")
    return 0


if __name__ == "__main__":
    args = [a for a in sys.argv[1:] if a != "--full"]
    sys.exit(run(Path(args[0] if args else "demo_out"), "--full" in sys.argv))
