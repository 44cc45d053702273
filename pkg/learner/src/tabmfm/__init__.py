"""Masked-feature pretraining over fused sample tables.

Consumes the training-view directory written by the fusion pipeline
(plain CSV + JSON files; no code-level coupling) and trains a
transformer to reconstruct hidden features with per-prediction
uncertainty. Ships two probes over the trained model: an
error-vs-uncertainty histogram and a masked-prediction sensitivity
matrix.
"""

__version__ = "0.1.0"
