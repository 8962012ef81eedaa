# utils/__init__.py
"""
Utility functions for the phenotyping application
"""
