"""Two-crop yield prediction from remote-sensing histogram cubes.

A shared convolutional backbone feeds one regression head per crop; the
joint loss takes the max of the two crops' normalized mean squared errors
so neither crop is left behind. The package also ships the classic
baselines (ridge, lasso, CART, random forest, deep feed-forward net), a
deterministic synthetic world for end-to-end validation, binary import
formats for real data, and a CLI covering the whole pipeline.
"""

__version__ = "0.1.0"
