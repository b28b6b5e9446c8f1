"""Regenerate src/msnerf/data/refiner_default.bin from scratch.

The bundled message-passing refiner is trained on 200 synthetic view
graphs (20 vertices, edge probability 0.3, 5 degree edge noise, 10%
outliers, seeds 500..699). Training is full-batch gradient descent,
so the result is deterministic; rerunning this script reproduces the
shipped blob bit for bit. Takes about 10 minutes on one CPU core.
"""

import pathlib
import sys
import time

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from msnerf import averaging as av              # noqa: E402
from msnerf import viewgraph as vg              # noqa: E402

OUT = (pathlib.Path(__file__).resolve().parents[1]
       / "src" / "msnerf" / "data" / "refiner_default.bin")


def main():
    sigma = float(np.deg2rad(5.0))
    train = []
    for k in range(200):
        g = vg.generate_synthetic_graph(20, 0.3, 500 + k)
        train.append(vg.perturb_edges(
            g, vg.NoiseSpec(rotation_sigma=sigma, outlier_fraction=0.10,
                            seed=500 + k)))
    t0 = time.time()
    params, hist = av.train_refiner(
        train, av.RefinerTrainConfig(lr=0.005, iters=400))
    print(f"trained in {time.time() - t0:.0f}s, "
          f"loss {hist[0]:.4f} -> {hist[-1]:.4f}")
    av.save_refiner_params(params, OUT)
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
