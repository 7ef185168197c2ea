"""Build the extension module with cargo and exercise it from Python.

    python3 python/smoke_test.py
"""

import shutil
import subprocess
import sys
import sysconfig
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build() -> Path:
    subprocess.run(
        ["cargo", "build", "--release", "-p", "datacollab-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libpydatacollab.so"
    if not lib.exists():
        lib = lib.with_suffix(".dylib")
    dest = Path(tempfile.mkdtemp()) / ("pydatacollab" + sysconfig.get_config_var("EXT_SUFFIX"))
    shutil.copy(lib, dest)
    return dest.parent


def main() -> None:
    sys.path.insert(0, str(build()))
    import pydatacollab as dc

    data = dc.synth_hospital(1000, seed=7)
    print(data)
    cfg = dc.RunConfig(mode="dc_proposed", parties=4, party_size=10, test_size=20, seed=1)
    res = dc.run(cfg, data)
    print(f"dc_proposed per-party AUC {[round(a, 3) for a in res.auc]}")

    report = dc.experiment(cfg, data, name="hospital", trials=5)
    print(report.to_table(), end="")
    for mode, mean, se in report.summary():
        assert 0.0 <= mean <= 1.0, (mode, mean)
        assert se >= 0.0

    x = data.x[:50]
    top, _ = dc.correlation_audit(x, x)
    assert abs(top - 1.0) < 1e-12
    assert dc.auc([0.2, 0.9, 0.9], [False, True, False]) == 0.75
    print("smoke test passed")


if __name__ == "__main__":
    main()
