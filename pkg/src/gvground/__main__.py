import sys

from gvground.cli import main

sys.exit(main())
