"""Zak-OTFS as a precoder over CP-OFDM: transforms, modems, channel, receiver and harness."""

__version__ = "0.1.0"
