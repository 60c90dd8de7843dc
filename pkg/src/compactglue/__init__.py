"""Compactly supported solutions and gluing for first-order underdetermined elliptic operators.

The heavy modules (``domain``, ``fields``, ``kernel``, ``solver``, ``gluing``)
are imported on demand so that the command-line front end can configure
thread counts before numpy loads.
"""

__version__ = "0.1.0"
