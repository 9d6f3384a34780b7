#!/usr/bin/env python3
import sys

from dotenv import load_dotenv

# Load environment variables before the package reads its SVMG_* defaults
load_dotenv()

from src.experiment import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
