"""Quality under a primitive budget on the box-room scene.

Run: python demos/budget_sweep.py [iters]

A budget caps the initial point cloud (farthest-point subsampling) and
blocks splits once reached. More primitives should buy more PSNR.
"""
import sys

from texsplat.synthetic import make_synthetic
from texsplat.trainer import TrainConfig, train

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
ds, _ = make_synthetic("box-room")
for budget in (20, 40, 80, None):
    r = train(ds, TrainConfig(iters=iters, seed=0, point_budget=budget))
    row = r.metrics[-1]
    splits = sum(e["action"] == "split" for e in r.events)
    print(f"budget {str(budget):>4}  prims {row['n_prims']:4d}  splits {splits:3d}  psnr {row['psnr_test']:.2f}")
