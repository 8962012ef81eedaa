#!/usr/bin/env python3
"""
Phenotyper - Main Application Entry Point
This script launches the phenotyping command-line application.
"""

import os
import sys

# Make the top-level packages importable when run from another directory
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from cli.app import PhenotyperApp


def main():
    """Main entry point for the application"""
    app = PhenotyperApp()
    return app.run()


if __name__ == "__main__":
    sys.exit(main())
