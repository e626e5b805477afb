"""Self-dual operators in theta = z*d/dz, their intersection-form moduli
charts, and the associated Darboux-Halphen / Ramanujan vector fields."""

__version__ = "0.1.0"
