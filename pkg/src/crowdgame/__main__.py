import sys

from crowdgame.harness.cli import main

sys.exit(main())
