"""Set-to-set basket completion with a multi-task Set Transformer."""
__version__ = "0.1.0"
