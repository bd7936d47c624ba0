"""Bell-type tests with entangled neutral meson pairs."""

__version__ = "0.1.0"
