"""Masked-reconstruction pretraining for graph-structured multivariate time
series forecasting: dual spatial/temporal masking, a compact graph-recurrent
forecaster, a from-scratch autodiff engine, and an evaluation harness.
"""

__version__ = "0.1.0"
