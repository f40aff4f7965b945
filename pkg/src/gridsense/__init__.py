"""Power-system waveform analytics: HIF detection, power quality, load identification and disaggregation."""

__version__ = "0.1.0"
