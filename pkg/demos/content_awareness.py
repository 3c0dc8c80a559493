"""Where do the texels go?

Run: python demos/content_awareness.py [iters]

The half-flat-half-noise plane has a uniform colour for x < 0 and
blocky noise for x > 0. With adaptation on, primitives over the flat half
should end with coarser texels (larger t2p exponent) than those over the
noisy half. The same run with adaptation off keeps one exponent
everywhere and spends more texels for about the same PSNR.
"""
import sys

import numpy as np

from texsplat.synthetic import make_synthetic
from texsplat.trainer import TrainConfig, train

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
ds, _ = make_synthetic("half-flat-half-noise")

for adapt in (True, False):
    r = train(ds, TrainConfig(iters=iters, seed=0, adapt=adapt))
    s = r.scene
    flat = s.means[:, 0] < 0
    row = r.metrics[-1]
    print(f"adapt={adapt!s:5}  psnr {row['psnr_test']:.2f}  texels {row['n_texels']}")
    if flat.any() and (~flat).any():
        print(f"    mean t2p  flat half {s.t2p[flat].mean():.2f}   noisy half {s.t2p[~flat].mean():.2f}")
    hist = dict(zip(*np.unique(s.t2p, return_counts=True)))
    print(f"    exponent histogram {hist}")
