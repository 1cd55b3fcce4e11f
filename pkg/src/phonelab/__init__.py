"""Desk-scale phonetically-informed masked-prediction speech pretraining."""

__version__ = "0.1.0"
