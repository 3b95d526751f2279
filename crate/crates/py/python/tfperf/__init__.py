from ._tfperf import *  # noqa: F401,F403
from ._tfperf import __all__  # noqa: F401
