#!/usr/bin/env python3
"""
MAGMA Pipeline Launcher

실행 방법:
    python scripts/magma.py simulate --output data/cohort.csv --seed 7
    python scripts/magma.py split data/cohort.csv --seed 7
    python scripts/magma.py train data/cohort_train.csv --hp-mode common --output models/common.json
    python scripts/magma.py evaluate data/cohort_test.csv --model models/common.json --output reports/common.csv

옵션은 `python scripts/magma.py <command> --help` 를 참고하세요.
"""

import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.cli.main import main

if __name__ == "__main__":
    main()
