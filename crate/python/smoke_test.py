"""Smoke test for the cfbss Python extension.

Builds the extension with cargo if needed, imports it from a temporary
directory and exercises the main entry points on a small configuration.
"""

import importlib
import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    subprocess.run(
        ["nice", "cargo", "build", "--release", "--offline", "-p", "cfbss-py"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "release" / "libcfbss_py.so"
    tmp = pathlib.Path(tempfile.mkdtemp())
    shutil.copy(lib, tmp / "cfbss_py.so")
    sys.path.insert(0, str(tmp))
    return importlib.import_module("cfbss_py")


def main():
    cb = load_module()

    op = cb.lift_operator([[1.0, 2.0]], [[3.0, -1.0]])
    assert op == [[1.0, 2.0, -3.0, 1.0], [3.0, -1.0, 1.0, 2.0]], op
    assert cb.lift_signal([[1.0]], [[2.0]]) == [[1.0], [2.0]]

    shrunk = cb.bss([[3.0], [4.0]], 1.0)
    assert abs(shrunk[0][0] - 2.4) < 1e-12 and abs(shrunk[1][0] - 3.2) < 1e-12
    assert cb.bss([[3.0], [4.0]], 1.0, [0]) == [[3.0], [4.0]]
    weighted = cb.gbss([[3.0], [4.0]], 1.0, 0.5, [0])
    assert abs(weighted[0][0] - 2.7) < 1e-12
    assert cb.support_select([5.0, 1.0, 3.0, 3.0], 0.5) == [0, 2]

    err, ok = cb.gradcheck("coarse", 0, 2)
    assert ok and err < 1e-5, err

    cfg = cb.Config(
        M=16, N=2, T=8, L=3, s_bar=6, s_c=3, s_common=1, snr_db=20,
        layers_coarse=2, layers_fine=2, coarse_p_min=1, coarse_p_max=3,
        layerwise_steps_per_stage=20, val_every=5, train_batch=8,
    )
    train = cb.Dataset.generate(cfg, "train", 40, 1)
    val = cb.Dataset.generate(cfg, "val", 20, 1)
    test = cb.Dataset.generate(cfg, "test", 20, 1)
    assert len(test) == 20 and len(test.supports(0)) == cfg.frames

    with tempfile.TemporaryDirectory() as d:
        path = str(pathlib.Path(d) / "test.ced")
        test.write(path)
        assert cb.Dataset.read(path).g_bar(3) == test.g_bar(3)

    est, iters, _ = cb.ista_l21(test.phi(), test.r_bar(0), 0.01)
    assert iters >= 1 and len(est) == 2 * 16 and len(est[0]) == 2 * 3

    init = cb.Estimator.initial(cfg, train)
    trained = cb.Estimator.train(cfg, train, val)
    before, after = init.nmse_db(test), trained.nmse_db(test)
    assert math.isfinite(before) and math.isfinite(after)
    coarse, fine = trained.layer_errors(test)
    assert len(coarse) == 2 and len(fine) == 2
    estimates = trained.infer(test)
    truth = [test.g_bar(k) for k in range(len(test))]
    assert abs(cb.nmse_db(truth, estimates) - after) < 1e-9

    try:
        cb.Estimator.initial(cfg, train, "bogus")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown variant accepted")

    print(f"smoke test ok: NMSE {before:.2f} dB at init, {after:.2f} dB trained")


if __name__ == "__main__":
    main()
