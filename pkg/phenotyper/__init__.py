# phenotyper/__init__.py
"""
Phenotyper package
Contains modules for extracting time-series features and learning
which of them distinguish labeled groups
"""

__version__ = '1.0.0'
