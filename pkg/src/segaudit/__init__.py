"""segaudit: label-error detection and benchmarking for semantic segmentation."""

__version__ = "0.1.0"
