"""Independent reference for the plain AdamW distillation trajectory.

Rebuilds the benchmark problem from the same seeded draws, differentiates the
loss with torch autograd (float64) and applies a hand-written AdamW loop.
Writes adamw_golden.json next to this file.

    python tests/golden/make_adamw_golden.py
"""

import json
import math
from pathlib import Path

import numpy as np
import torch

SEED = 42
L, N, D = 6, 8, 16
CONTENT_SHIFT, INIT_SHIFT = 0.2, 0.5
LAMBDA_CONTENT = 1 / 0.8
LR, B1, B2, EPS = 1e-3, 0.9, 0.999, 1e-8
ITERS, LOG_EVERY = 300, 10


def draws():
    g = np.random.Generator(np.random.Philox(SEED))
    s = 1 / math.sqrt(D)
    pos = g.standard_normal((N, D))
    ctx = g.standard_normal((N, D))
    wq = g.standard_normal((L, D, D)) * s
    wk = g.standard_normal((L, D, D)) * s
    wv = g.standard_normal((L, D, D)) * 0.5 * s
    proj = g.standard_normal((D, D)) * s
    lat = np.random.Generator(np.random.Philox((SEED + 0x9E3779B97F4A7C15) % 2**64))
    zt = lat.standard_normal((N, D))
    zc = zt + CONTENT_SHIFT * lat.standard_normal((N, D))
    z0 = zt + INIT_SHIFT * lat.standard_normal((N, D))
    return pos, ctx, wq, wk, wv, proj, zt, zc, z0


def main():
    pos, ctx, wq, wk, wv, proj, zt, zc, z0 = (torch.tensor(a, dtype=torch.float64) for a in draws())

    def run(z):
        h = z + pos
        maps = []
        for l in range(L):
            src = h if l % 2 == 0 else ctx
            a = torch.softmax((h @ wq[l]) @ (src @ wk[l]).T / math.sqrt(D), dim=1)
            maps.append(a)
            h = h + a @ (src @ wv[l])
        return maps, h

    t_maps, _ = run(zt)
    _, c_feat = run(zc)

    z = z0.clone()
    m = torch.zeros_like(z)
    v = torch.zeros_like(z)
    rows = []
    for t in range(ITERS + 1):
        zv = z.clone().requires_grad_(True)
        maps, feat = run(zv)
        kl = sum((tm * (tm.log() - sm.log())).sum() for tm, sm in zip(t_maps, maps)) / (L * N)
        content = (((feat - c_feat) @ proj) ** 2).mean()
        total = kl + LAMBDA_CONTENT * content
        if t % LOG_EVERY == 0:
            rows.append({"iteration": t, "L_distill": kl.item(), "L_content": content.item(),
                         "L_total": total.item()})
        if t == ITERS:
            break
        (g,) = torch.autograd.grad(total, zv)
        k = t + 1
        m = B1 * m + (1 - B1) * g
        v = B2 * v + (1 - B2) * g * g
        z = z - LR * (m / (1 - B1**k)) / ((v / (1 - B2**k)).sqrt() + EPS)

    out = Path(__file__).with_name("adamw_golden.json")
    out.write_text(json.dumps({"seed": SEED, "iterations": ITERS, "rows": rows}, indent=1) + "\n")


if __name__ == "__main__":
    main()
