"""Counterfactual data augmentation for session-based recommendation.

Pipeline: train a session-conditioned diffusion model and a causal response
model on observed slate logs, synthesize counterfactual sessions, retrain
the recommender on the union, and measure the popularity-bias shift online
and offline.
"""

__version__ = "0.1.0"
