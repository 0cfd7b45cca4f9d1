"""Problem reductions: time replication and change of state variables."""

from .change_of_vars import *  # noqa: F401,F403
from .problem_b import *  # noqa: F401,F403
