import sys

from fundusnet.cli import main

sys.exit(main())
