"""Deep linear network training-dynamics laboratory (C++ core bindings)."""

from ._dlnlab import *  # noqa: F401,F403
from ._dlnlab import __doc__ as _core_doc

__doc__ = _core_doc
