"""From raw questionnaire codes to empowerment tertiles.

Run with ``python3 demos/empowerment_index.py``.
"""

import numpy as np

from vaxsae.empowerment import build_index, distribution_table
from vaxsae.simulate import simulate_responses

rng = np.random.default_rng(5)
waves = np.repeat([2003, 2008, 2013, 2018], 400)
raw, latent = simulate_responses(waves, rng, missing_rate=0.02)
print(raw.head())

res = build_index(raw)
print(f"dropped {res.n_dropped} incomplete respondents")
print("decision-making loadings", np.round(res.dm_model.loadings, 3))

merged = res.table.merge(latent, on="respondent_id")
print("score vs latent factor:",
      round(np.corrcoef(merged["dm_score"], merged["f_dm"])[0, 1], 3),
      round(np.corrcoef(merged["hc_score"], merged["f_hc"])[0, 1], 3))
print(distribution_table(res.table).to_string(index=False))
