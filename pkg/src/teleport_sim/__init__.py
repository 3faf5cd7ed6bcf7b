"""Time-bin photonic teleportation simulator: Fock-space optics, click statistics and tomography."""

__version__ = "0.1.0"
