"""Quantization kernels, rescalers, rate control and the layer pipeline."""
