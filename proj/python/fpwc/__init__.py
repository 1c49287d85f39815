"""Device-control agent core bindings."""

try:
    from ._fpwc import *  # noqa: F401,F403
    from ._fpwc import __doc__  # noqa: F401
except ImportError:  # built extension sits on PYTHONPATH during development
    from _fpwc import *  # noqa: F401,F403
