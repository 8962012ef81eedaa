# cli/__init__.py
"""
Command-line front end for the phenotyping pipeline
"""
