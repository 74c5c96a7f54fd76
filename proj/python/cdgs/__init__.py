from ._cdgs import *  # noqa: F401,F403
from ._cdgs import __doc__  # noqa: F401
