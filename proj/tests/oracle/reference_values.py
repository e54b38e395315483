"""Independent numpy evaluation of the values pinned in the C++ tests.

Run: python3 tests/oracle/reference_values.py
"""
import math

import numpy as np
from scipy.special import erf
from scipy.stats import binom, norm


def fusion_reference():
    # V=4 views, d=8 features, latent 8, bottleneck 4, evidence hidden 4, eval mode.
    shapes = [
        ("evidence.w1", (4, 8)), ("evidence.b1", (4, 1)), ("evidence.w2", (1, 4)), ("evidence.b2", (1, 1)),
        ("proj.w", (8, 8)), ("proj.b", (8, 1)), ("attention.w", (1, 8)), ("attention.b", (1, 1)),
        ("purifier.w1", (4, 8)), ("purifier.b1", (4, 1)), ("purifier.w2", (8, 4)), ("purifier.b2", (8, 1)),
        ("norm.gain", (8, 1)), ("norm.bias", (8, 1)),
    ]
    p = {}
    for t, (name, shape) in enumerate(shapes):
        i = np.arange(shape[0] * shape[1])
        vals = 0.3 * np.sin(0.9 * i + 1.7 * t + 0.2)
        if name == "norm.gain":
            vals = 1.0 + vals
        p[name] = vals.reshape(shape)
    v = np.arange(4)[:, None]
    j = np.arange(8)[None, :]
    f = np.cos(0.5 * v + 0.3 * j + 0.1 * v * j)

    gelu = lambda x: 0.5 * x * (1 + erf(x / math.sqrt(2)))
    softplus = lambda x: np.log1p(np.exp(x))
    hidden = gelu(f @ p["evidence.w1"].T + p["evidence.b1"].T)
    logit = hidden @ p["evidence.w2"].T + p["evidence.b2"]
    e = np.exp(softplus(logit[:, 0]))
    w = 1 - 1 / (e + 1)
    pooled = (w[:, None] * f).sum(0) / (w.sum() + 1e-8)
    f_ev = p["proj.w"] @ pooled + p["proj.b"][:, 0]
    scores = f @ p["attention.w"][0] + p["attention.b"][0, 0]
    alpha = np.exp(scores - scores.max())
    alpha /= alpha.sum()
    f_att = alpha @ f
    fused = f_ev + f_att
    mid = gelu(p["purifier.w1"] @ fused + p["purifier.b1"][:, 0])
    res = fused + p["purifier.w2"] @ mid + p["purifier.b2"][:, 0]
    xhat = (res - res.mean()) / np.sqrt(res.var() + 1e-5)
    return xhat * p["norm.gain"][:, 0] + p["norm.bias"][:, 0]


def main():
    print("mask 5x5 gamma=2 at (2,4):", repr(math.exp(-2 * 2 / math.sqrt(8))))
    print("log(1+e^-1):", repr(math.log1p(math.exp(-1))))
    s = np.array([0.5, 0.6, 0.7])
    print("bounds z=1.96:", repr(s.mean() - 1.96 * s.std()), repr(s.mean() + 1.96 * s.std()))
    print("z(alpha=0.05):", repr(norm.ppf(0.975)))
    print("smoothed 0.9*0.7+0.1*0.5:", repr(0.9 * 0.7 + 0.1 * 0.5))
    print("updates 75->1 with c=6:", math.ceil((75 - 1) / 6))
    for n_trials in (50, 100):
        n = 200 * n_trials
        lo, hi = binom.interval(0.99, n, 1 / 200)
        print(f"200-way chance 99% interval over {n} queries:", lo / n, hi / n)
    sigma = 0.3 * ((3 - 1) / 2 - 1) + 0.8
    k = np.exp(-np.arange(-1, 2) ** 2 / (2 * sigma**2))
    k /= k.sum()
    print("k=3 kernel:", repr(k.tolist()))
    print("fusion reference:", repr(fusion_reference().tolist()))


if __name__ == "__main__":
    main()
