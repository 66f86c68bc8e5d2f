"""Compare analytic AP-position gradients against central finite differences.

Usage: python3 scripts/compare_gradients.py [--seeds 0 1 2] [--method asymptotic|exact]
"""

import argparse

import numpy as np

from cellfree.bundle import build_scenario
from cellfree.config import SystemConfig
from cellfree.experiments import gradient_agreement
from cellfree.gradients import fd_gradient, sum_rate_gradient


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--method", choices=["asymptotic", "exact"], default="asymptotic")
    ap.add_argument("--exclusion", type=float, default=25.0)
    args = ap.parse_args()
    cfg = SystemConfig(radius_m=300.0, num_aps=10, num_users=48, antennas_per_ap=32,
                       assoc_count=6)
    total = agree = 0
    for seed in args.seeds:
        scn = build_scenario(cfg, seed=seed)
        d = scn.layout.ap_positions[:, None, :] - scn.layout.ue_positions[None, :, :]
        dmin = np.hypot(d[..., 0], d[..., 1]).min(axis=1)
        aps = [l for l in range(cfg.num_aps) if dmin[l] >= args.exclusion]
        g = sum_rate_gradient(scn, method=args.method).grad
        fd = fd_gradient(scn, 0.5, aps=aps).grad
        for l in aps:
            rel, cos = gradient_agreement(g[l], fd[l])
            ok = rel <= 0.15 or cos >= 0.9
            total += 1
            agree += ok
            print(f"seed {seed} ap {l:2d} dmin {dmin[l]:6.1f}  rel {rel:7.3f}  cos {cos:6.3f}"
                  f"  {'ok' if ok else 'MISMATCH'}")
    print(f"{agree}/{total} APs agree ({args.method})")


if __name__ == "__main__":
    main()
