"""Regenerates stats_reference.json with scipy. Run from this directory."""
import json

import numpy as np
from scipy import stats

rng = np.random.default_rng(20240607)


def sample(n):
    kind = rng.integers(3)
    if kind == 0:
        return rng.normal(size=n)
    if kind == 1:
        # coarse grid: many ties
        return rng.integers(0, max(2, n // 3), size=n).astype(float)
    return np.round(rng.exponential(size=n), 1)


cases = []
for i in range(1000):
    which = i % 3
    if which == 0:
        n = int(rng.integers(5, 80))
        x, y = sample(n), sample(n)
        if rng.random() < 0.5:
            y = x + rng.normal(scale=rng.uniform(0.1, 3), size=n)
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            continue
        r = stats.spearmanr(x, y)
        cases.append({"kind": "spearman", "x": x.tolist(), "y": y.tolist(),
                      "rho": float(r.statistic), "p": float(r.pvalue)})
    elif which == 1:
        a = sample(int(rng.integers(2, 60))) * rng.uniform(0.2, 5)
        b = sample(int(rng.integers(2, 60))) * rng.uniform(0.2, 5) + rng.normal()
        if np.var(a) == 0 and np.var(b) == 0:
            continue
        r = stats.ttest_ind(a, b, equal_var=False)
        cases.append({"kind": "welch", "a": a.tolist(), "b": b.tolist(),
                      "t": float(r.statistic), "df": float(r.df), "p": float(r.pvalue)})
    else:
        k = int(rng.integers(2, 7))
        groups = [sample(int(rng.integers(2, 40))) + rng.normal(scale=0.5) for _ in range(k)]
        if sum(((g - g.mean()) ** 2).sum() for g in groups) == 0:
            continue
        r = stats.f_oneway(*groups)
        cases.append({"kind": "anova", "groups": [g.tolist() for g in groups],
                      "f": float(r.statistic), "p": float(r.pvalue)})

with open("stats_reference.json", "w") as f:
    json.dump({"generator": "scipy " + __import__("scipy").__version__, "cases": cases}, f)
print(len(cases))
