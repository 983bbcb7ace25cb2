"""Driver identification from multichannel driving telemetry.

A temporal-convolutional encoder with a Haar wavelet side branch maps
fixed-length telemetry windows to behavior embeddings; embeddings are
trained with a triplet objective and classified with gradient-boosted
decision trees.
"""

__version__ = "0.1.0"
