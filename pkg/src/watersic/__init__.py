"""WaterSIC: waterfilling-informed successive interference cancellation quantization."""

__version__ = "0.1.0"
