"""Over-the-air federated learning in a cell-free MIMO uplink."""

__version__ = "0.1.0"
