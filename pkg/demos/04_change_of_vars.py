# %% [markdown]
# # Constraints of the form Phi(y) >= 0
#
# A general problem with `Phi(y) >= 0` is checked by choosing `n` more
# functions `P(y)` so that `(P, Phi)` is a local diffeomorphism. In the new
# coordinates the constraint is `x >= 0` and the previous machinery applies.
# The multipliers come back through `psi_y = psi_z P' + psi_x Phi'`.

# %%
import numpy as np

from stateverify.builtin import example_path, load_example
from stateverify.document import parse_document
from stateverify.expr import parse_expr
from stateverify.pipeline import verify_document
from stateverify.reductions.change_of_vars import ChangeOfVariables, symmetric_cancellation_residual

# %% [markdown]
# The atom problem with the nonlinear split `w = exp(z) + x`.

# %%
res = verify_document(load_example("atoms_c"), seed=1)
print(res.report.summary())
print(f"tube: {res.tube.n_points} points, min |det F'| {res.tube.min_abs_det:.3f}, "
      f"round trip {res.tube.max_roundtrip:.1e}")

# %% [markdown]
# The same verdict comes out for any admissible split. Here the density
# problem is written with a nonlinear `P` and still fails only on the sign
# of the density.

# %%
text = example_path("density").read_text().replace("kind = A", "kind = C").replace(
    "[state_constraint]\nx", "[state_constraint]\nPhi = x\n\n[change_of_vars]\nw1 = z1*exp(z2)\nw2 = z2 + x^2")
res = verify_document(parse_document(text))
print(res.report.violations, "min mu_dot:", res.report["NONNEG_DENSITY"].value)

# %% [markdown]
# The second derivatives of `F` enter the transformed adjoint equation
# through a symmetric contraction. Two routes to it agree at random points.

# %%
polar = ChangeOfVariables(("r", "th"), (parse_expr("r*cos(th)", {"r", "th"}),),
                          parse_expr("r*sin(th)", {"r", "th"}))
rng = np.random.default_rng(3)
worst = max(symmetric_cancellation_residual(polar, *rng.normal(size=(1, 2)), rng.uniform(0.3, 1.2, 2),
                                            *rng.normal(size=(2, 2))) for _ in range(100))
print(f"worst relative mismatch over 100 points: {worst:.1e}")
