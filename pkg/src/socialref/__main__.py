import sys

from socialref.harness.cli import main

sys.exit(main())
