"""Compress one user's beamforming weights with each method and compare.

    python demos/compress_weights.py [seed]
"""
import sys

import numpy as np

from stdcodec import CodecConfig, StdConfig, compress, decompress
from stdcodec.mimo import rate_loss, synth_channels, weights_from_v, zf_weights
from stdcodec.pipeline import PRACTICAL_ETA

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

# 2 x 128 x 136 weight tensor: 2 streams, 128 antennas, 136 resource blocks
ch = synth_channels(K=1, J=136, N_t=128, seed=seed)
ref = zf_weights(ch)
v = ref.V[0]
print(f"weight tensor {v.shape}, seed {seed}")

std = StdConfig(ranks=(2, 30, 40), s1=0.5, s2=0.01, eta=dict(PRACTICAL_ETA), beta=0.0)
print(f"{'method':8} {'CR':>7} {'RE':>8} {'RL':>8} {'iters':>5} {'kbit':>7}")
for method in ("STD+FC", "STD", "TD"):
    res = compress(v, CodecConfig(method, std))
    v_hat = decompress(res.blob)
    assert np.array_equal(v_hat, res.decoded)
    rl = rate_loss(ch, ref.W, weights_from_v(v_hat[None]))
    print(f"{method:8} {res.cr:7.4f} {res.rel_err:8.4f} {rl:8.1e} {res.iterations:5d} "
          f"{8 * len(res.blob) / 1000:7.1f}")
