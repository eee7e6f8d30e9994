# %% [markdown]
# # Spectral data of a two-type branching process
#
# Type 1 splits at rate 1 into either two type-1 children or a single
# type-2 child, each with probability 1/2.  Type 2 splits at rate 1 into one
# child of each type.  Everything the simulators need follows from the mean
# matrix of this model.

# %%
import numpy as np

from mtbranch import (REFERENCE_MODELS, derived_generators, mean_data, rate_function, retrospective_generator,
                      spectral_data, variational_lambda)
from mtbranch.spectral import alpha_u, matrix_exponential, two_state_rate

np.set_printoptions(precision=6, suppress=True)
model = REFERENCE_MODELS["M2"]()
means = mean_data(model)
print("mean offspring matrix M:\n", means.M)
print("first-moment generator A = diag(a)(M - I):\n", means.A)

# %% [markdown]
# The Perron root is the Malthusian growth rate.  The left eigenvector gives
# the long-run type frequencies and the right one the reproductive values.
# Their product is the type law of ancestors sampled deep in the past.

# %%
spec = spectral_data(model)
print(f"growth rate   {spec.lam:.10f}  (sqrt(1/2) = {np.sqrt(0.5):.10f})")
print("type frequencies pi   ", spec.pi)
print("reproductive values h ", spec.h)
print("ancestral law alpha   ", spec.alpha)

# %% [markdown]
# Along a surviving lineage, types follow a Markov chain whose generator is
# A conjugated by h and shifted by the growth rate.  Its stationary law is
# alpha, not pi.

# %%
G = retrospective_generator(model, spec).G
print("lineage generator G:\n", G)
print("alpha G =", spec.alpha @ G)
derived = derived_generators(model, spec)
print("time-reversed generator:\n", derived.G_rev)
print("uniform-selection generator:\n", derived.G_tilde)

# %% [markdown]
# Looking back from time t at lag u, the ancestral type law drifts from pi
# toward alpha as u grows.

# %%
for u in (0.0, 1.0, 2.0, 4.0, 8.0):
    print(f"u = {u:>4}: alpha^u = {alpha_u(spec, u)}")

# %% [markdown]
# The growth rate of the lineages that spent a fraction nu of their time in
# each type is lambda - I_G(nu).  For two types I_G has a closed form.  The
# growth rate is also the maximum of <nu, r> - I over the simplex, where I is
# the rate function of the uniform-selection generator.

# %%
for x in (0.5, 0.6, 0.7, 0.8, 0.9):
    nu = [x, 1 - x]
    print(f"nu = ({x:.1f}, {1 - x:.1f}): I_G = {rate_function(G, nu):.6f} "
          f"(closed form {two_state_rate(G, nu):.6f}), growth {spec.lam - rate_function(G, nu):.4f}")
value, argmax = variational_lambda(model, spec)
print(f"max of <nu, r> - I: {value:.8f} at nu = {argmax}")

# %% [markdown]
# The expected population follows the matrix exponential of A.

# %%
E = matrix_exponential(spec.A, 1.0)
print("e^A:\n", E)
print("expected population at t = 1 from type 1:", E[0].sum())
