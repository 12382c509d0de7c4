"""A short training run, inference on a held-out scene and the ablation knobs.

Uses a tiny network so it finishes in about a minute on one CPU core. The
numbers say nothing about final quality; see the acceptance suite for the
overfit run.

Run: python demos/03_train_infer_ablate.py
"""

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from hdrba.autodiff import no_grad
from hdrba.dataset import synth_dynamic_scene
from hdrba.networks import HDRNet, images_to_batch
from hdrba.radiometry import build_input
from hdrba.trainer import TrainConfig, evaluate_scenes, infer, train


def main(out_dir: Path) -> None:
    scenes = [synth_dynamic_scene(s, 32, motion_px=3) for s in range(3)]
    held_out = synth_dynamic_scene(100, 32, motion_px=3)
    cfg = TrainConfig(width=4, batch_size=4, patch_size=16, iterations=60, lr=1e-3, seed=0)

    def report(it, row):
        if it % 20 == 0:
            print(f"iter {it:3d} loss {row['loss_total']:.4f}")

    result = train(cfg, scenes, out_dir, callback=report)
    print("training-set metrics:", {k: round(v, 2) for k, v in evaluate_scenes(result.net, scenes).items()})

    out = infer(result.net, held_out)
    print(f"held-out scene: mask in [{out['mask'].min():.3f}, {out['mask'].max():.3f}], hdr max {out['hdr'].max():.3f}")

    # ablations share the trained weights; only the config knobs change
    trained = HDRNet.load(out_dir / "model.ckpt")
    variant = lambda **kw: HDRNet(replace(trained.cfg, **kw), trained.params)  # noqa: E731
    xs = [images_to_batch(build_input(l, t)) for l, t in zip(held_out.ldrs, held_out.exposures)]
    with no_grad():
        base = trained(*xs)
        motion = variant(mode="motion")(*xs)
        hard = variant(attention="hard", tau=0.9)(*xs)
    print(f"motion vs brightness mode: mean |diff| of final output {np.abs(motion.final.data - base.final.data).mean():.2e}")
    print(f"hard mask values: {sorted(np.unique(hard.mask.data).tolist())}")
    for a in (1.0, 3.0, 10.0):
        m = variant(mask_softness=a).mask_from_logits(base.mask_logits).data
        print(f"softness a={a:4.1f}: mask variance {m.var():.2e}")


if __name__ == "__main__":
    with tempfile.TemporaryDirectory() as tmp:
        main(Path(tmp))
