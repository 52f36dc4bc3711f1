"""Wind-turbine blade icing diagnosis.

Two diagnosis frameworks built on a pair of per-class adversarial feature
extractors: a CNN classifier over concatenated residual features, and a
transfer variant that aligns source and target feature distributions while
keeping the label head out of the alignment gradients.
"""

__version__ = "0.1.0"
