from ._entlab import *  # noqa: F401,F403
from ._entlab import __version__  # noqa: F401
