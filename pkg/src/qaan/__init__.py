"""Classical and quantum-assisted Boltzmann machines as associative memories for GANs."""

__version__ = "0.1.0"
