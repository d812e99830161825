"""No-response test for locating a cavity in a heat conductor from one set of Cauchy data."""

__version__ = "0.1.0"
