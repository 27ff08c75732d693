"""Smoke test for the slipfem_py extension.

Build and install with `pip install ./crates/py --no-build-isolation`, then run
`python python/smoke_test.py`.
"""

import math
import tempfile

import slipfem_py as sf


def main():
    mesh = sf.Mesh.unit_square(4)
    assert len(mesh) == 32
    assert abs(sum(h for _, _, h in mesh.boundary()) - 4.0) < 1e-12
    n_u, n_p = mesh.dof_counts()
    assert (n_u, n_p) == (2 * 81, 25)

    navier = sf.SlipLaw.navier(2.0)
    assert navier.eval([1.0, -0.5]) == [2.0, -1.0]
    assert navier.certify(500, 5.0)["passed"]

    tresca = sf.SlipLaw.tresca(0.8, 1e-3)
    s = tresca.eval([100.0, 0.0])
    assert 0.79 < s[0] < 0.8

    try:
        sf.SlipLaw.dynamic(1.0, 1.0, -1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative ramp time accepted")

    c = sf.constants(4, navier, infsup=False)
    assert math.isfinite(c["c_tr"]) and c["c_tr"] > 0

    with tempfile.TemporaryDirectory() as out:
        cfg = sf.Config(
            '{"experiment": "dynamic", "n": 4, "t_end": 0.05}',
            ["output_dir=" + out],
        )
        times, probe = cfg.dynamic(1.0)
        assert len(times) == len(probe) == 11
        assert probe[0] == 0.0 and all(math.isfinite(v) for v in probe)

        conv = sf.Config("experiment = \"convergence\"\nlevels = [2, 4, 8]", ["output_dir=" + out])
        result = conv.run()
        assert result["files"]
    print("slipfem_py smoke test ok")


if __name__ == "__main__":
    main()
