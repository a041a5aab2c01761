"""Cross-lingual voice conversion on framed acoustic features.

Two systems are provided: a deep-autoencoder bottleneck encoder followed by
a target-speaker mapping network, and a target-speaker GMM tokenizer
baseline.  Both operate on CVCF feature files.
"""

__version__ = "0.1.0"
