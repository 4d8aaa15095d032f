"""Smoke test for the uu_audit extension module.

Build it first:

    cargo build --release -p uu-audit-py --features extension-module

then run `python3 python/smoke_test.py`. The compiled library is copied to a
temporary directory as `uu_audit.so` and imported from there.
"""

import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def locate_library():
    explicit = os.environ.get("UU_AUDIT_LIB")
    if explicit:
        return Path(explicit)
    for profile in ("release", "debug"):
        for name in ("libuu_audit_py.so", "libuu_audit_py.dylib"):
            candidate = ROOT / "target" / profile / name
            if candidate.exists():
                return candidate
    sys.exit("uu_audit library not found; build it with cargo first")


def main():
    work = Path(tempfile.mkdtemp(prefix="uu_audit_smoke_"))
    try:
        shutil.copy(locate_library(), work / "uu_audit.so")
        sys.path.insert(0, str(work))
        import uu_audit

        assert uu_audit.confidence(0.9) == abs(0.9 - 0.5)
        assert uu_audit.predicted_label(0.5) == 1
        assert uu_audit.group_of(0.9, 0) == 2
        assert uu_audit.group_of(0.6, 0) == 1
        assert uu_audit.balanced_accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75

        fit = uu_audit.fit_ols([[0.0], [1.0], [2.0]], [1.0, 3.0, 5.0], ["x"])
        assert abs(fit["coefficients"][0]["gamma"] - 2.0) < 1e-12

        try:
            uu_audit.group_of(0.9, 0, delta=0.7)
        except uu_audit.AuditError:
            pass
        else:
            raise AssertionError("delta outside (0, 0.5) accepted")

        course = work / "course"
        n_events = uu_audit.synthesize(str(course), preset="flipped", seed=1, confounding=0.2, students=80, weeks=3)
        assert n_events > 0

        audit = uu_audit.Audit.run(str(course), model="forest", seed=1, folds=4)
        test = audit.assignments("test")
        assert len(test) == 80
        assert {a.group for a in test} <= {0, 1, 2}
        counts = audit.regroup(0.25)
        assert sum(counts.values()) == 80
        assert audit.regroup(0.45)["KU"] >= counts["KU"]

        prevalence = audit.prevalence()
        assert abs(sum(g["total"]["fraction"] for g in prevalence["splits"]["test"]["groups"].values()) - 1.0) < 1e-12

        out = work / "artifacts"
        wrote_characterization = audit.write_artifacts(str(out))
        assert (out / "assignments.csv").exists()
        if wrote_characterization:
            report = audit.characterize()
            assert report["target_mode"] == "binary"
            assert all(-10 <= c["clipped"] <= 10 for c in report["coefficients"])

        print(f"{audit!r}: balanced accuracy {audit.balanced_accuracy:.3f}, test groups {counts}")
        print("smoke test passed")
    finally:
        shutil.rmtree(work, ignore_errors=True)


if __name__ == "__main__":
    main()
