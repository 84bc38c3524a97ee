"""
VadKit Logger Setup

Simple logging configuration for VadKit components.
"""

import logging
import sys

ROOT_LOGGER = 'vadkit'


def setup_logger(name=None, verbose=False, debug=False):
    """Setup logging configuration for VadKit and return the named child logger"""

    root = logging.getLogger(ROOT_LOGGER)
    level = logging.DEBUG if debug else (logging.INFO if verbose else logging.WARNING)

    if not root.handlers:
        # Diagnostics go to stderr; stdout carries command results
        handler = logging.StreamHandler(sys.stderr)
        formatter = logging.Formatter(
            '[%(asctime)s] %(levelname)s: %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )
        handler.setFormatter(formatter)
        root.addHandler(handler)
        root.setLevel(level)
    elif verbose or debug:
        root.setLevel(min(root.level, level))

    if not name or name == ROOT_LOGGER:
        return root
    if name.startswith(ROOT_LOGGER + '.'):
        name = name[len(ROOT_LOGGER) + 1:]
    return root.getChild(name)


def log_operation(logger, operation, status, details=None):
    """Log a standard VadKit operation"""
    if status == 'success':
        logger.info(f"✓ {operation} completed successfully")
    elif status == 'info':
        logger.info(f"{operation}")
    elif status == 'warning':
        logger.warning(f"{operation}: {details}")
    elif status == 'error':
        logger.error(f"✗ {operation} failed: {details}")

    if details and status in ['success', 'info']:
        logger.info(f"   Details: {details}")
