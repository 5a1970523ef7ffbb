"""Variational preparation of metrologically useful spin states under local dephasing."""

__version__ = "0.1.0"
