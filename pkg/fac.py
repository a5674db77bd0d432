"""Command-line launcher

Usage:
    python fac.py convert --l2 l2.wav --l1-ref l1.wav --out converted.wav
    python fac.py --help
"""

import sys
from pathlib import Path

# Add project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from src.cli import main

if __name__ == '__main__':
    sys.exit(main())
