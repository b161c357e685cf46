"""Matrix primitives, configuration and errors shared by every module."""
