import sys

from gdcr.cli import main

sys.exit(main())
