"""Sum-of-squares operators built from complex vector fields.

Symbolic calculus for the fields, Hermite-basis ground states of the
separated ODE family, tau sweeps, and the separated-solution family that
defeats the a priori estimate implied by hypoellipticity.
"""
__version__ = "0.1.0"
