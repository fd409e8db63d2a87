"""Run one stage of the Decision-Transformer pipeline."""

import sys
import warnings

from src.main import main

# Suppress specific warnings
warnings.filterwarnings("ignore", category=UserWarning, module="pydantic._internal._fields")

if __name__ == "__main__":
    sys.exit(main())
