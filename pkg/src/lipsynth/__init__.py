"""Speech-driven lip movement generation with derivative correlation and a three-stream discriminator."""

__version__ = "0.1.0"
