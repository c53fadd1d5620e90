"""Dynamical search for stationary solutions of nonlocal semilinear elliptic problems.

Modules: ``grid`` (discretization), ``model`` (nonlinearities and coefficient),
``flow`` (parabolic integrator and spectral oracle), ``classify`` (decay and
blow-up verdicts), ``threshold`` (basin-boundary search and Newton refinement),
``conditions`` (hypothesis audit) and ``cli``.
"""

__version__ = "0.1.0"
