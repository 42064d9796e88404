"""GAN-based augmentation of labeled image patches, on a small numpy autodiff core."""

__version__ = "0.1.0"
