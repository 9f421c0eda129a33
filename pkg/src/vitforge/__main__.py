import sys

from vitforge.cli import main

sys.exit(main())
