import sys

from htmsp.cli import main

sys.exit(main())
