#!/usr/bin/env python3
"""
Startup script for nlcert
Checks the Python version, creates the output directories and hands over to the CLI
"""
import os
import platform
import sys


def check_python_version():
    """Check if Python version is compatible"""
    if sys.version_info < (3, 8):
        print("❌ Python 3.8 or higher is required")
        print(f"Current version: {platform.python_version()}")
        return False
    return True


def create_directories():
    """Create output and log directories"""
    for directory in ("results", "logs"):
        if not os.path.exists(directory):
            os.makedirs(directory)
            print(f"📁 Created directory: {directory}")


def main():
    if not check_python_version():
        sys.exit(64)
    sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
    create_directories()

    from nlcert.cli import run
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
