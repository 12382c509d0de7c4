"""Exposure stacks, tonemapping and file formats.

Synthesises a dynamic scene, shows how each exposure saturates, inverts an
LDR back to radiance and writes the stack to disk in the scene layout used by
the CLI.

Run: python demos/01_radiometry_and_io.py [out_dir]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from hdrba.dataset import load_scene, quantize_scene, save_scene, synth_dynamic_scene
from hdrba.imageio import write_preview
from hdrba.radiometry import build_input, inverse_mu_law, ldr_to_hdr, mu_law


def main(out_dir: Path) -> None:
    scene = synth_dynamic_scene(seed=7, size=64, motion_px=4)
    gt = scene.gt
    print(f"radiance range {gt[gt > 0].min():.2e} .. {gt.max():.3f} ({np.log10(gt.max() / gt[gt > 0].min()):.1f} decades)")

    for ldr, t in zip(scene.ldrs, scene.exposures):
        print(f"t={t:5.2f}: {np.mean(ldr == 1.0):6.1%} clipped, mean level {ldr.mean():.2f}")

    # the middle frame is the reference; invert it where it is not clipped
    ldr, t = scene.ldrs[1], scene.exposures[1]
    ok = ldr < 1.0
    err = np.abs(ldr_to_hdr(ldr, t) - gt)[ok].max()
    print(f"reference frame inverts to radiance with max error {err:.1e} on unclipped pixels")

    x = build_input(ldr, t)
    print(f"network input per exposure: {x.shape[-1]} channels (LDR + radiance)")

    tm = mu_law(gt)
    print(f"mu-law maps [0, 1] -> [{mu_law(0.0):.0f}, {mu_law(1.0):.0f}]; 1% radiance -> {mu_law(0.01):.3f}")
    print(f"inverse round trip error {np.abs(inverse_mu_law(tm) - gt).max():.1e}")

    q = quantize_scene(scene)
    save_scene(q, out_dir / "scene")
    write_preview(gt, out_dir / "gt_preview.ppm")
    back = load_scene(out_dir / "scene")
    assert back.ldrs.tobytes() == q.ldrs.tobytes()
    print(f"wrote {sorted(p.name for p in (out_dir / 'scene').iterdir())} and gt_preview.ppm to {out_dir}")


if __name__ == "__main__":
    if len(sys.argv) > 1:
        main(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            main(Path(tmp))
