"""Trainable Gabor / MixPool / dilated-block CNNs and FusionNet on a numpy autodiff core."""
__version__ = "0.1.0"
