"""Allow running SDMNAV as: python -m sdmnav"""

import sys

from sdmnav.cli import main

sys.exit(main())
