"""Smoke test of the Python extension.

Imports an installed `ahmass` module, or falls back to the library built by
`cargo build -p ahmass-py --features extension-module --release`.
"""

import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    try:
        import ahmass
        return ahmass
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = os.path.join(ROOT, "target", profile, "libahmass_py.so")
        if os.path.exists(lib):
            tmp = tempfile.mkdtemp()
            shutil.copy(lib, os.path.join(tmp, "ahmass.so"))
            sys.path.insert(0, tmp)
            import ahmass
            return ahmass
    sys.exit("ahmass extension not found; build it with "
             "`cargo build -p ahmass-py --features extension-module --release`")


def close(a, b, tol):
    return abs(a - b) <= tol * max(abs(b), 1.0)


def main():
    ah = load()
    checks = []

    checks.append(("I_{3,3} = pi/2", close(ah.integral_i(3, 3.0), math.pi / 2, 1e-13)))
    checks.append(("prefactor at n=3", close(ah.asymptotic_prefactor(3), math.pi / 4, 1e-13)))

    v0 = ah.Lapse.basis(3, 0)
    x = [0.3, -0.2, 0.1]
    r2 = sum(c * c for c in x)
    checks.append(("V^0 value", close(v0.value(x), (1 + r2) / (1 - r2), 1e-14)))

    ev = ah.Eigenfunction(3, c=1.0)
    checks.append(("eigenfunction of constant data", close(ev.value(x), v0.value(x), 1e-10)))

    e = ah.Perturbation.wang(3, c=1.0, a=[0.5, 0.0, 0.0])
    mv = e.mass_vector(sphere_order=8)
    checks.append(("Wang p0 = 4 pi", close(mv.p[0], 4 * math.pi, 1e-2)))
    checks.append(("Wang p1 = 2 pi / 3", close(mv.p[1], 2 * math.pi / 3, 1e-2)))

    rot = e.rotate(1, 2, 0.7).mass_vector(sphere_order=8, integrand="hessian")
    checks.append(("rotation keeps p0", close(rot.p[0], mv.p[0], 1e-2)))

    summary = json.loads(ah.run_config('{"scenario": "integrals_selftest"}'))
    checks.append(("integrals_selftest gates", summary["all_pass"]))

    try:
        ah.run_config('{"scenario": "wang", "bogus": 1}')
        checks.append(("config errors raise", False))
    except ValueError as err:
        checks.append(("config errors raise", "bogus" in str(err)))

    failed = 0
    for name, ok in checks:
        print(("PASS " if ok else "FAIL ") + name)
        failed += not ok
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
