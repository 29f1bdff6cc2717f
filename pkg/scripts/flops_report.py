#!/usr/bin/env python3
"""Print MAC counts per block for the full-size and micro receivers."""

import json

from jointrx.bench import estimate_flops
from jointrx.config import PROFILES
from jointrx.model import count_params

for name in ("paper", "micro"):
    prof = PROFILES[name]
    cfg = prof.model_config(2)
    for n_ap in prof.sweep.n_ap:
        rep = estimate_flops(cfg, prof.grid.n_subcarriers, prof.grid.n_symbols, n_ap)
        ref = f" (published figure {rep['reference_gflops']})" if name == "paper" else ""
        print(f"{name} N_R={n_ap}: {count_params(cfg):,} params, {rep['total_gflops']:.3f} GFLOPs{ref}")
    print(json.dumps(estimate_flops(cfg, prof.grid.n_subcarriers, prof.grid.n_symbols, 1)["per_ap"], indent=2))
