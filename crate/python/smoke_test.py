"""Smoke test of the perimesh_py extension module.

Build the extension first with `cargo build -p perimesh-py`; the script copies the
shared library next to a temporary package path and imports it.
"""

import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def import_module():
    for profile in ("release", "debug"):
        lib = os.path.join(ROOT, "target", profile, "libperimesh_py.so")
        if os.path.exists(lib):
            break
    else:
        sys.exit("libperimesh_py.so not found; run `cargo build -p perimesh-py` first")
    tmp = tempfile.mkdtemp(prefix="perimesh_py_")
    shutil.copy(lib, os.path.join(tmp, "perimesh_py.so"))
    sys.path.insert(0, tmp)
    import perimesh_py

    return perimesh_py, tmp


def main():
    pm, tmp = import_module()

    zeros = pm.laguerre_zeros(2)
    assert abs(zeros[0] - (2 - math.sqrt(2))) < 1e-14, zeros
    assert abs(pm.clebsch_gordan(2, 2, 0, 0, 0, 0) - 1 / math.sqrt(5)) < 1e-15

    mesh = pm.MeshSpec(14, 8, 0.4, 0.8)
    ground = pm.solve_levels(0, 2, mesh)
    rot = pm.solve_levels(2, 1, mesh)
    print(ground[0], ground[1], rot[0])
    assert -0.6 < ground[0].energy < -0.59, ground[0].energy
    assert ground[0].energy < rot[0].energy < ground[1].energy

    s, forbidden = pm.reduced_strength(rot[0], ground[0])
    assert not forbidden and s > 0
    w = pm.transition_probability(s, rot[0].energy, ground[0].energy, 2)
    f = pm.oscillator_strength(s, rot[0].energy, ground[0].energy, 2)
    assert w > 0 and f < 0
    print(f"S = {s:.6e}  f = {f:.6e}  W = {w:.6e} s^-1")

    path = os.path.join(tmp, "ground.bin")
    ground[0].save(path)
    back = pm.Wavefunction.load(path)
    assert back.energy == ground[0].energy and back.coefficients == ground[0].coefficients

    try:
        pm.MeshSpec(0, 8, 0.4, 0.8)
    except ValueError:
        pass
    else:
        raise AssertionError("invalid mesh accepted")
    print("python smoke test passed")


if __name__ == "__main__":
    main()
