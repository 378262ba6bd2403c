import sys

from volbench.cli import main

sys.exit(main())
