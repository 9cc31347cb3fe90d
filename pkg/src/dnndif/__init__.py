"""Detecting item non-invariance across groups with simulation-trained networks.

Submodules:

- ``simgen``: multigroup 2PL designs and response generation
- ``logitdif``: pairwise logistic-regression DIF baseline
- ``dnn``: the feed-forward detector, trained with Nesterov SGD
- ``evaluation``: pooled ROC, AUROC and Liu cutpoints
- ``corpus``, ``store``: on-disk formats
- ``pipeline``, ``cli``: studies and the command-line tool

The package root imports nothing heavy so the CLI can set BLAS threading
before numpy loads.
"""

__version__ = "0.1.0"
