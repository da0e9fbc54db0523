"""Cho phép chạy ``python -m graindoe``"""

import sys

from .cli import main


sys.exit(main())
