# %% [markdown]
# # What lineages look like in a large population
#
# Three behaviours show up once the population is large.  Type frequencies
# settle at pi.  Ancestors sampled far back follow alpha.  Each lineage
# spends a fraction of its time in each type that slowly concentrates at
# alpha.  The last effect is slow, and the numbers below show how slow.

# %%
import numpy as np

from mtbranch import REFERENCE_MODELS, ldp_rate_estimate, spectral_data
from mtbranch.estimators import pop_average_rows, population_summaries
from mtbranch.forward import tv_distance
from mtbranch.spectral import alpha_u

model = REFERENCE_MODELS["M2"]()
spec = spectral_data(model)
summaries = [s for s in population_summaries(model, spec, 10.0, 40, u=5.0) if not s.extinct]
freqs = np.array([s.type_counts / s.size for s in summaries])
print(f"{len(summaries)} populations at t = 10, mean size {np.mean([s.size for s in summaries]):.0f}")
print("mean type frequencies", freqs.mean(axis=0), " pi", spec.pi)
print("median TV distance to pi:", np.median(tv_distance(freqs, spec.pi)))

# %%
row = pop_average_rows(model, spec, summaries, 10.0, 5.0)[0]
print(f"ancestors at lag 5: {row.params}")
print(f"TV distance of the mean ancestral histogram to alpha^u: {row.estimate:.4f}")
print("alpha^u for u = 5:", alpha_u(spec, 5.0), " alpha:", spec.alpha)

# %% [markdown]
# The share of lineages whose occupation is 0.1 or more from alpha in total
# variation falls roughly like the standard deviation of a time average, so
# it takes t near 100 before that share drops below 10%.

# %%
for t in (4.0, 8.0, 12.0):
    runs = [s for s in population_summaries(model, spec, t, 20, eps=0.1) if not s.extinct]
    share = np.mean([s.far_counts[0] / s.size for s in runs])
    print(f"t = {t:>4}: share of lineages far from alpha {share:.3f}")

# %% [markdown]
# Lineages with atypical occupation still grow exponentially, at the rate
# lambda - I_G(nu).  The trunk estimates this by importance sampling.  The
# band uses the whole eps-ball, so it sits above the point value.  The
# estimate approaches it from below, since the probability of the ball
# carries a prefactor that only fades like (log t) / t.

# %%
for t in (10.0, 20.0, 30.0):
    res = ldp_rate_estimate(model, spec, [0.7, 0.3], eps=0.02, t=t, n=20000)
    print(f"t = {t:>4}: growth near (0.7, 0.3) {res.estimate:.4f} ± {res.stderr:.4f}, {res.hits} hits")
print(f"asymptotic band [{res.band[0]:.4f}, {res.band[1]:.4f}]; lambda - I_G(nu) = {res.point:.4f}")
