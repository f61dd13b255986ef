"""Quantitative multiecho FLASH estimation: signal model, classical and
neural property fitting, contrast synthesis, and the experiment harness."""

try:
    from ._qmri import *  # noqa: F401,F403  (wheel layout: extension inside the package)
except ImportError:
    from _qmri import *  # noqa: F401,F403  (in-tree builds: extension on sys.path)

__version__ = "0.1.0"
