#!/usr/bin/env python3
"""
Main launcher for the uqfair command line.
"""

import os
import sys

# Add project root to Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.cli.main import main


if __name__ == "__main__":
    main()
