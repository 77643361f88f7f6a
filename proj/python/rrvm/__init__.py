"""Python interface to the rrvm record/replay virtual machine."""

try:
    from ._rrvm import *  # noqa: F401,F403  (pip-installed layout)
except ImportError:
    from _rrvm import *  # noqa: F401,F403  (in-tree build on PYTHONPATH)
