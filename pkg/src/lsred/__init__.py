"""Numerical toolkit for concentrating solutions of -eps^2 div(c grad u) + a u = b u^(p-1) on manifolds."""
__version__ = "0.1.0"
