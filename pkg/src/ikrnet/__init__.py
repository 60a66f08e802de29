"""IKrNet drug-footprint ECG classifier at desk scale."""

__version__ = "0.1.0"
