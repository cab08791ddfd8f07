"""End-to-end learned coherent optical transceiver with Co-GRU networks."""

__version__ = "0.1.0"
