"""Silent speech recognition from synchronized tongue and lip image streams.

The package covers the whole pipeline: frame I/O and bicubic resizing,
DCT and deep-autoencoder feature extraction, monophone GMM-HMM training
with Viterbi-EM, a hybrid DNN-HMM trained on forced alignments, bigram
Viterbi decoding, and word error rate scoring. See the `cli` module (or
the `silentspeech` console script) for the stage-by-stage pipeline and
`experiment` for the configuration it runs from.
"""

__version__ = "0.1.0"
