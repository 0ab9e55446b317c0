"""Lagrangian angle flow of closed 1-form graphs over periodic Riemannian tori.

Modules: ``geometry`` (grids, metrics, covariant stencils), ``angle``
(Lagrangian angle of a graph), ``flow`` (RK4 integration, companion heat
equation), ``monitors`` (per-slice quantities, evolution-identity
residuals, Harnack functional, decay fits), ``scenarios``/``cli``
(config-driven experiments).
"""

__version__ = "0.1.0"
