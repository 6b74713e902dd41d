"""
XAI Inversion - model inversion attacks that exploit explanations

Trains image classifiers, emits saliency-map explanations, trains inversion
models that reconstruct private inputs from (prediction, explanation) tuples,
attacks non-explainable targets through surrogate attention transfer and
measures the resulting privacy leakage.
"""

__version__ = "0.3.0"

# Package information
__author__ = "xai-inversion developers"
__description__ = "XAI-aware model inversion attacks and privacy leakage metrics"
