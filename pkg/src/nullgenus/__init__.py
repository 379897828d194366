"""Numerical construction of bounded complete null curves and minimal surfaces of finite genus."""

__version__ = "0.1.0"
