"""Smoke test for the triplanar_py extension module.

Build the extension first:

    cargo build -p triplanar-py

The test copies the cdylib next to itself under the importable module name.
"""

import math
import pathlib
import shutil
import subprocess
import sys

ROOT = pathlib.Path(__file__).resolve().parents[1]


def _import_module():
    # Overwriting the cdylib while it is mapped corrupts the process, so the
    # build-and-copy step must happen at most once per interpreter.
    if "triplanar_py" in sys.modules:
        return sys.modules["triplanar_py"]
    subprocess.run(["cargo", "build", "-q", "-p", "triplanar-py"], cwd=ROOT, check=True)
    so = ROOT / "target" / "debug" / "libtriplanar_py.so"
    dest = pathlib.Path(__file__).parent / "triplanar_py.so"
    shutil.copyfile(so, dest)
    sys.path.insert(0, str(dest.parent))
    import triplanar_py

    return triplanar_py


def test_fk_ik_roundtrip():
    m = _import_module()
    sols = m.forward_kinematics(17.0, 15.0, 15.0)
    assert len(sols) == 6
    assert sum(1 for _, _, a in sols if a == 1) == 3
    assert sum(1 for _, _, a in sols if a == -1) == 3
    for theta1, alpha, _ in sols:
        r1, r2, r3 = m.inverse_kinematics(theta1, alpha, 17.0)
        assert math.isclose(r1, 17.0, abs_tol=1e-9)
        assert math.isclose(r2, 15.0, abs_tol=1e-9)
        assert math.isclose(r3, 15.0, abs_tol=1e-9)


def test_census_small_grid():
    # A 256-cell grid is the coarsest resolution that still resolves all six
    # cusps of the reference slice.
    m = _import_module()
    census = m.slice_census(grid_n=256)
    assert census["cusps"] == 6
    assert census["nodes"] == 6
    assert census["verified"]


if __name__ == "__main__":
    test_fk_ik_roundtrip()
    test_census_small_grid()
    print("smoke test passed")
