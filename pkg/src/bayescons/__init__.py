"""Numerical checks of Bayesian posterior consistency.

Submodules:

``densities``
    Densities on an interval, quadrature, and the divergences h, H, D and chi-squared.
``priors``
    Discrete, Polya-tree, random-histogram and cosine exponential-family priors.
``posterior``
    Posterior updates and predictive densities, restricted or not.
``martingale``
    Traces of the numerator ``L_n``, transformed-ratio martingales and their diagnostics.
``covering``
    Disjoint covers and summability of square-rooted prior masses.
``experiments``
    Config-driven runs, CSV/JSON output and the command line.
"""

__version__ = "0.1.0"
