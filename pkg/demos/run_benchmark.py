"""Run the built-in cantilever benchmark and export the printable design.

Produces, under out/benchmark/:
  history.csv   per-iteration record of the optimization
  fields.vtk    final phi/chi/displacement fields (legacy VTK)
  stiff.stl     extruded region with chi above the threshold (stiff infill)
  soft.stl      extruded region with chi below the threshold (soft infill)
"""

import os

import numpy as np

from gradtopo import export
from gradtopo.config import benchmark_config
from gradtopo.optimizer import Optimizer


def main():
    outdir = os.path.join("out", "benchmark")
    os.makedirs(outdir, exist_ok=True)

    config = benchmark_config(output_dir=outdir)
    opt = Optimizer(config)

    def progress(state, rec):
        if rec.iter % 100 == 0:
            print(f"  iter {rec.iter:4d}  compliance {rec.compliance:8.1f}  "
                  f"m_chi {rec.m_chi:.3f}  delta_phi {rec.delta_phi:.2e}")

    print(f"running kappa2={config.kappa2:g} on a "
          f"{config.mesh_nx}x{config.mesh_ny} mesh ...")
    state, history = opt.run(callback=progress)
    print(f"{'converged' if state.converged else 'iteration cap'} after "
          f"{state.iter} iterations: compliance {state.compliance:.1f}, "
          f"m_chi {state.m_chi:.3f}")

    export.write_history_csv(history, os.path.join(outdir, "history.csv"))
    export.write_fields(state, opt.mesh, os.path.join(outdir, "fields.vtk"))

    # split the structure at the chi threshold into two printable solids;
    # both parts are restricted to the material region phi >= 0.5
    def masked(level):
        g = np.minimum(state.phi - 0.5, level)
        return 0.5 + g / (4.0 * max(float(np.abs(g).max()), 1e-30))

    threshold = config.chi_threshold
    for name, level in (("stiff", state.chi - threshold),
                        ("soft", threshold - state.chi)):
        contour = export.threshold_contour(masked(level), opt.mesh, 0.5)
        if contour.loops_above:
            path = os.path.join(outdir, f"{name}.stl")
            n = export.extrude_to_stl(contour.loops_above,
                                      config.extrude_height, path)
            print(f"wrote {path} ({n} triangles)")


if __name__ == "__main__":
    main()
