"""Relative error per solver iteration on a few weight tensors.

    python demos/convergence.py
"""
import numpy as np

from stdcodec import CodecConfig, StdConfig
from stdcodec.mimo import synth_channels, zf_weights
from stdcodec.pipeline import PRACTICAL_ETA, solve

cfg = CodecConfig("STD+FC", StdConfig(ranks=(2, 30, 40), s1=0.5, s2=0.01,
                                      eta=dict(PRACTICAL_ETA), beta=0.0))
for seed in range(3):
    v = zf_weights(synth_channels(K=1, J=136, N_t=128, seed=seed)).V[0]
    _, trace = solve(v, cfg)
    re = np.asarray(trace.rel_err)
    print(f"seed {seed}: " + " ".join(f"{x:.4f}" for x in re[: min(len(re), 16)])
          + f" ... final {re[-1]:.4f} after {len(re) - 1} iterations")
