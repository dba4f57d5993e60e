"""Streaming joint beat/downbeat tracking.

Pipeline: WAV -> causal log-filterbank spectral frames -> convolutional
frontend -> contextual block-processing transformer encoder with relative
positional attention -> per-frame beat/downbeat activations -> DBN forward
decoding into beat times with downbeat numbering.
"""

__version__ = "0.1.0"
