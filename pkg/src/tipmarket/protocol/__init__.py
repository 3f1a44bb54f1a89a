"""Three-party encrypted scoring protocol: messages, roles, transports and sessions."""

from .messages import *  # noqa: F401,F403
from .roles import *  # noqa: F401,F403
from .session import *  # noqa: F401,F403
from .transport import *  # noqa: F401,F403

__all__ = [n for n in dir() if not n.startswith("_")]
