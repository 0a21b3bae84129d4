"""Decode captions from brain-signal vectors.

Stage one regresses voxel vectors into image-feature space (ridge, a
three-layer network, or a five-layer network with stacked-autoencoder
pretraining). Stage two generates a caption from the feature with a
two-layer LSTM language model.
"""

__version__ = "0.1.0"
