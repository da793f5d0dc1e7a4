"""Grid-sweep study of in-hand cube reorientation across robot hand designs."""

__version__ = "0.1.0"
