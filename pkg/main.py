"""
menuconnect
RochetNet / affine maximizer menus, softmax training and low-loss paths between trained menus

Usage: python main.py <command> --config run.json [--seed S] [--out DIR] [--verbose]
"""

import os
import sys

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from cli.commands import main

if __name__ == "__main__":
    sys.exit(main())
