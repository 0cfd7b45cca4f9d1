# %% [markdown]
# # Atoms at the junctions
#
# The packaged `atoms` problem has `z' = f(u)`, `x' = u`, `|u| <= 1` and
# `x >= 0`. The reference control is `-1, 0, 1` on `[0,1], [1,2], [2,3]`,
# so `x` touches zero on the middle interval. We rebuild the multipliers
# from the trajectory alone and look at the state-constraint measure.

# %%
from stateverify.builtin import load_example
from stateverify.pipeline import a_form, settings_for
from stateverify.stationarity import check_max_condition, verify_theorem

# %%
doc = load_example("atoms")
p, w, mult, _ = a_form(doc, settings_for(doc))
rep = verify_theorem(p, w, mult)
print(rep.summary())

# %% [markdown]
# The costate `psi_x` is `1` before the arc, `0` on it and `-1` after, so the
# measure has two unit atoms and no density.

# %%
for i, seg in enumerate(mult.psi_x.segments):
    print(f"interval {i}: psi_x in [{seg.values.min():+.6f}, {seg.values.max():+.6f}]")
print("atoms:", mult.atoms, " c =", mult.c)

# %% [markdown]
# The atoms follow the cost weight `a` exactly.

# %%
for a in (0.5, 1.0, 2.0, 3.0):
    d = load_example("atoms", {"a": a})
    _, _, m, _ = a_form(d, settings_for(d, 400))
    print(f"a = {a}: atoms = ({m.atoms[0]:.9f}, {m.atoms[1]:.9f})")

# %% [markdown]
# Stationary is not the same as maximal. The Hamiltonian is convex in `u`
# here, so `u = 0` beats `u = -1` on the first interval by a margin of 2.

# %%
mx = check_max_condition(p, w, mult)
print(f"max condition passed: {mx.passed}, worst gap {mx.worst_gap:.6f}")
