"""Rigorous box-covering tools for attracting sets of solenoid-type maps."""
__version__ = "0.1.0"
