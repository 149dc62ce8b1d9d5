"""Condition an S^2 orientation field on a handful of observed normals.

Writes graymaps of the first normal component for the unconditional and the
conditional field into the output directory (default ``demo_out``).

    python3 demos/conditional_orientations.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from dualrf.gaussian import CovarianceModel, GridDomain
from dualrf.io import write_pgm
from dualrf.sphere import geodesic_distance
from dualrf.spherefield import (SphereObservations, conditional_simulate_sphere_field,
                                simulate_uniform_sphere_field)


def main(out):
    out.mkdir(parents=True, exist_ok=True)
    dom = GridDomain(80, 80)
    latent = CovarianceModel("exponential", 25.0)
    rng = np.random.default_rng(1)
    locs = rng.uniform(5, 75, (12, 2))
    # observed normals point along +x on the left and +z on the right
    normals = np.where(locs[:, :1] < 40, [1.0, 0.0, 0.0], [0.0, 0.0, 1.0])
    obs = SphereObservations(locs, normals)

    uncond = simulate_uniform_sphere_field(latent, dom, 3, seed=7)
    cond = conditional_simulate_sphere_field(latent, dom, obs, unconditional=uncond)
    err = geodesic_distance(cond.at(dom.cell_index(locs)), obs.orientations).max()
    print(f"largest geodesic misfit at the data: {err:.2e} rad")

    write_pgm(out / "unconditional_s1.pgm", uncond.values[..., 0], -1, 1)
    write_pgm(out / "conditional_s1.pgm", cond.values[..., 0], -1, 1)
    print(f"graymaps written to {out}")


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out"))
