"""Data-driven dissipativity learning and neural stabilizing control for VSG grids."""
__version__ = "0.1.0"
