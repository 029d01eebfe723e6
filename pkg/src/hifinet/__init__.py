"""Two-stage sensor fault diagnosis for wireless sensor networks.

Stage 1 classifies each node's window with an LSTM stacked autoencoder,
stage 2 refines those predictions with a confidence-modulated graph
attention network over the cluster topology.
"""

from hifinet.classes import FaultClass

__version__ = "0.1.0"

__all__ = ["FaultClass", "__version__"]
