from dataclasses import dataclass

import pytest

from stateverify.builtin import example_path, load_example
from stateverify.document import ProblemDocument, parse_document
from stateverify.pipeline import a_form, settings_for


@dataclass
class Case:
    doc: ProblemDocument
    p: object
    w0: object
    mult: object


def make_case(doc: ProblemDocument, n_steps=None) -> Case:
    p, w0, mult, _ = a_form(doc, settings_for(doc, n_steps))
    return Case(doc, p, w0, mult)


NO_ATOM = """
[meta]
name = noatom
T = 3

[states]
z
x

[controls]
u

[dynamics]
z = x
x = u

[cost]
J = -z_0 + z_T - x_0 - x_T

[control_constraints]
box = u^2 - 1

[state_constraint]
x

[reference]
t1 = 1
t2 = 2
control.u = -1 | 0 | 1
init.z = 0
init.x = 1
"""

# the atom example with z' = -u^2; a = -4 makes h = 1 and the Hamiltonian concave in u
CONCAVE = """
[meta]
name = concave
T = 3

[params]
a = -4

[states]
z
x

[controls]
u

[dynamics]
z = -u^2
x = u

[cost]
J = z_0 - z_T + a*(x_0 + x_T)

[control_constraints]
box = u^2 - 1

[state_constraint]
x

[reference]
t1 = 1
t2 = 2
control.u = -1 | 0 | 1
init.z = 0
init.x = 1
"""


def density_c_text(P1="z1*exp(z2)", P2="z2 + x^2") -> str:
    """The density example as a kind C document with a nonlinear split."""
    text = example_path("density").read_text().replace("kind = A", "kind = C")
    return text.replace("[state_constraint]\nx",
                        f"[state_constraint]\nPhi = x\n\n[change_of_vars]\nw1 = {P1}\nw2 = {P2}")


@pytest.fixture(scope="session")
def atoms():
    return make_case(load_example("atoms"))


@pytest.fixture(scope="session")
def density():
    return make_case(load_example("density"))


@pytest.fixture(scope="session")
def no_atom():
    return make_case(parse_document(NO_ATOM))


@pytest.fixture(scope="session")
def concave():
    return make_case(parse_document(CONCAVE))
