"""Training-efficiency measurement harness.

Measures accuracy obtained per unit of energy expended while training a
neural architecture, across a model-size grid and four stopping criteria.
"""

__version__ = "0.1.0"
