import sys

from retemp.cli import main

sys.exit(main())
