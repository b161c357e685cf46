"""Rate-distortion oracles."""
