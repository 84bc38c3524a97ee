#!/usr/bin/env python3
"""
VadKit Module Entry Point

This module handles the command-line execution when using python3 -m vadkit
"""

import sys

from vadkit.cli import main


def module_main():
    """Main entry point for python3 -m vadkit execution"""
    return main()


if __name__ == '__main__':
    sys.exit(module_main())
