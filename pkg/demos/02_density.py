# %% [markdown]
# # A negative density
#
# In the `density` problem every condition holds except one: the density of
# the state-constraint measure on the arc is `(t - 1)(t - 2)`, negative
# inside. The targets in the cost are tuned so that no atoms appear.

# %%
import numpy as np

from stateverify.builtin import density_targets, load_example
from stateverify.pipeline import a_form, reduce_document, settings_for
from stateverify.stationarity import verify_theorem
from stateverify.variations import check_dj_inequality

# %%
print({k: str(v) for k, v in density_targets(1, 2, 3).items()})
doc = load_example("density")
p, w, mult, _ = a_form(doc, settings_for(doc))
rep = verify_theorem(p, w, mult)
print(rep.summary())

# %%
t = w.t_main(1)
mu = mult.mu_dot.segments[1].values[:, 0]
print("max |mu_dot - (t-1)(t-2)| =", np.max(np.abs(mu - (t - 1) * (t - 2))))
print("total mass =", mult.total_mass())

# %% [markdown]
# After the intervals are replicated onto a common time, the same multipliers
# satisfy every equation of the replicated problem. The negative mass now sits
# in `alpha1`, whose sign is the only thing that fails.

# %%
B, mb, brep = reduce_document(doc)
print(brep.summary())

# %% [markdown]
# A hat function on the arc is an admissible direction `kappa >= 0`. Pairing
# it with the measure gives the first-order change of the cost, and here it
# is negative, so the process cannot be a minimum.

# %%
dj = check_dj_inequality(p, w, mult)
for label, v in sorted(zip(dj.labels, dj.values), key=lambda r: r[1])[:5]:
    print(f"{label:>20}  {v:+.6f}")
