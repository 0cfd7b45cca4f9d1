# %% [markdown]
# # Variations along the arc
#
# A function `kappa` on the arc fixes a variation: `x_bar = kappa` there, the
# control follows from `g_u`, and the linearized system carries `z_bar` and the
# outer pieces. The cost derivative along it should equal the pairing of
# `kappa` with the measure.

# %%
import numpy as np

from stateverify.builtin import load_example
from stateverify.pipeline import a_form, settings_for
from stateverify.variations import (
    Kappa, build_variation, directional_derivative, fd_ladder, measure_pairing,
    pairing_identity_residual, perturb_process, random_kappa,
)

# %%
doc = load_example("density")
p, w, mult, _ = a_form(doc, settings_for(doc))
rng = np.random.default_rng(0)
for j in range(5):
    k = random_kappa(rng, 1.0, 2.0, "pl" if j % 2 else "smooth")
    var = build_variation(p, w, k)
    pr = pairing_identity_residual(p, w, mult, var)
    print(f"{k.label:>13}: lhs {pr.lhs:+.9f}  rhs {pr.rhs:+.9f}  rel {pr.relative:.1e}  "
          f"J'w {directional_derivative(p, w, var):+.9f}  pairing {measure_pairing(mult, w, k):+.9f}")

# %% [markdown]
# Realizing the variation in the nonlinear system: difference quotients of
# the cost approach the derivative at first order.

# %%
k = Kappa(lambda t: 1 + (t - 1) * (2 - t), lambda t: 3 - 2 * t, "1+(t-1)(2-t)")
var = build_variation(p, w, k)
lad = fd_ladder(p, w, var)
for e, q, err in zip(lad.eps, lad.quotients, lad.errors):
    print(f"eps {e:.0e}: quotient {q:+.9f}  error {err:.2e}")
print(f"slope {lad.slope:.4f}, derivative {lad.derivative:+.9f}")

# %% [markdown]
# With `kappa >= 1` the perturbed state leaves the boundary by about `eps`, so
# the variation is feasible. The cost still drops, which is the failure seen
# from the primal side.

# %%
for eps in (1e-2, 1e-3):
    r = perturb_process(p, w, var, eps)
    print(f"eps {eps:.0e}: min x on arc {r.min_x_arc:.3e}, feasible {r.feasible}, cost change {r.cost_gap:+.3e}")
