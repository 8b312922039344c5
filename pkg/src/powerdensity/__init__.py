"""Anisotropic conductivity reconstruction from power density functionals.

The package root stays free of numpy imports so that the command line front
end can fix thread counts before any numerical library is loaded.
"""

__version__ = "0.1.0"
