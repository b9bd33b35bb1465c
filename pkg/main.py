#!/usr/bin/env python3
"""
Launcher for the phase-field flow optimizer CLI.
"""

import sys
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Add project root to path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from src.main import main


if __name__ == "__main__":
    sys.exit(main())
