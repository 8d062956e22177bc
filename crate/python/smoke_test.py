#!/usr/bin/env python3
"""Smoke test for the cxmri_py extension module.

Builds nothing itself: looks for the compiled cdylib under target/release or
target/debug (build it with `cargo build -p cxmri-py --release`), copies it
into a temp directory under the importable module name, and runs a handful of
numerical checks through the Python surface.
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def locate_library() -> Path:
    names = ["libcxmri_py.so", "libcxmri_py.dylib", "cxmri_py.dll"]
    for profile in ("release", "debug"):
        for name in names:
            candidate = REPO / "target" / profile / name
            if candidate.exists():
                return candidate
    sys.exit(
        "cxmri_py library not found; run `cargo build -p cxmri-py --release` first"
    )


def import_module():
    lib = locate_library()
    stage = Path(tempfile.mkdtemp(prefix="cxmri_py_"))
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    shutil.copy(lib, stage / f"cxmri_py{suffix}")
    sys.path.insert(0, str(stage))
    import cxmri_py

    return cxmri_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main() -> None:
    cx = import_module()

    # Tensor basics and elementwise identities.
    t = cx.Tensor([2], [3.0, 0.0], [4.0, 1.0])
    assert t.shape == [2]
    approx(t.magnitude().re()[0], 5.0)
    approx(t.phase().re()[1], math.pi / 2)
    assert t.conj().conj().im() == t.im()

    # Centered orthonormal FFT: unitarity and exact round trip.
    phantom = cx.generate_phantom(32, 32, seed=7, phase_detail=2)
    k = cx.fft2c(phantom)
    approx(k.norm2(), phantom.norm2(), 1e-9 * phantom.norm2())
    back = cx.fft2c(k, inverse=True)
    approx(back.sub(phantom).norm2(), 0.0, 1e-10)

    # 1x1 complex convolution with weight i rotates by 90 degrees.
    x = cx.Tensor([1, 1, 1], [1.0], [2.0])
    w = cx.Tensor([1, 1, 1, 1], [0.0], [1.0])
    b = cx.Tensor([1], [0.0], [0.0])
    y = cx.conv2d_complex(x, w, b)
    approx(y.re()[0], -2.0)
    approx(y.im()[0], 1.0)

    # Activation identities.
    d = cx.Tensor([1], [3.0], [-2.0])
    assert cx.crelu(d).im()[0] == 0.0
    assert cx.zrelu(d).re()[0] == 0.0
    approx(cx.modrelu(d, [0.0]).re()[0], 3.0)  # b = 0 is the identity
    approx(cx.cardioid(cx.Tensor([1], [0.7], [0.0])).re()[0], 0.7)

    # Acquisition pipeline: mask acceleration, SENSE adjoint identity.
    maps = cx.generate_maps(32, 32, coils=4, seed=5)
    mask = cx.poisson_mask(32, 32, accel=3.0, calib=8, seed=11)
    accel = cx.mask_acceleration(mask)
    assert 2.85 <= accel <= 3.15, f"acceleration {accel}"
    kspace = cx.sense_forward(phantom, maps, mask)
    zf = cx.sense_adjoint(kspace, maps, mask)
    n_zf = cx.nrmse(zf, phantom)
    assert 0.0 < n_zf < 1.0

    # CS baseline improves on the zero-filled image.
    recon, objective = cx.ista_wavelet_recon(
        kspace, maps, mask, lam=3e-4, iterations=40
    )
    assert all(
        objective[i + 1] <= objective[i] + 1e-9 for i in range(1, len(objective) - 1)
    ), "objective increased"
    assert cx.nrmse(recon, phantom) < n_zf

    # Metrics on identical images.
    approx(cx.nrmse(phantom, phantom), 0.0)
    assert math.isinf(cx.psnr(phantom, phantom))
    approx(cx.ssim(phantom, phantom), 1.0, 1e-9)
    approx(cx.phase_rmse(phantom, phantom), 0.0)

    # Haar round trip.
    coeffs = cx.haar2(phantom, levels=2)
    approx(cx.haar2(coeffs, levels=2, inverse=True).sub(phantom).norm2(), 0.0, 1e-10)
    shrunk = cx.soft_threshold(coeffs, 1e9)
    assert shrunk.norm2() == 0.0

    print("cxmri_py smoke test: all checks passed")


if __name__ == "__main__":
    main()
