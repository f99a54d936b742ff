"""Incremental mixture importance sampling with shotgun optimization.

The package combines a fixed-step ODE engine, a family of gradient-free
parameter estimators, and a synthetic-likelihood layer under one adaptive
importance sampler that targets multimodal posteriors.
"""

__version__ = "0.1.0"
