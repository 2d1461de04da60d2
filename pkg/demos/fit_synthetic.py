"""Simulate a small country, fit one vaccine and look at what comes back.

Run with ``python3 demos/fit_synthetic.py``; takes a minute or two.
"""

import numpy as np

from vaxsae.inference import FitConfig, conditional_coverage, fit, summarize
from vaxsae.simulate import simulate_geography, simulate_survey
from vaxsae.validate import correlation_table, validation_table

rng = np.random.default_rng(2024)

# 20 units grouped into 4 states, surveyed in 3 waves
graph = simulate_geography(20, 4, rng)
data, truth = simulate_survey(graph, 3, children_per_cell=30, rng=rng)
print(f"{data.n_records} children in {graph.n_units} units, waves {data.years}")

draws = fit(data, graph, FitConfig(chains=2, warmup=1000, draws=1000, seed=1), "dpt_complete")
print(f"max R-hat {draws.meta['max_rhat']:.3f}, MH acceptance {np.round(draws.meta['accept_rate'], 2)}")

# A cell where every sampled child is vaccinated gives its intercept no upper
# bound under the vague N(0, 1000) prior, so that alpha drifts and its R-hat
# stays high. Lowering sigma2_alpha in FitConfig tames it.
worst = sorted(draws.meta["rhat"].items(), key=lambda kv: -(kv[1] or 0))[:3]
print("worst R-hat:", [(k, round(v, 3)) for k, v in worst])

# the space-time fields against the values that generated the data
est = draws.flat("gamma").mean(axis=0)
true = truth.states["dpt_complete"].gamma
for k, name in enumerate(("m_d", "h_d", "m_hc", "h_hc")):
    r = np.corrcoef(est[k].ravel(), true[k].ravel())[0, 1]
    print(f"gamma_{name}: correlation with truth {r:.2f}")

table = summarize(draws, graph).to_frame()
print(table[["lga", "year", "pi_dm0_hc0_mean", "pi_dm2_hc2_mean"]].head())

print(conditional_coverage(draws, data, "dm").query("year == 'all'"))

val = validation_table(draws, data, graph, "dpt_complete")
print(correlation_table(val))
