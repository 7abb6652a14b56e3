"""KPZ line ensembles, semi-discrete polymers, the multiplicative SHE and Fredholm determinants."""

__version__ = "0.1.0"
