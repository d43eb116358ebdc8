import sys

from corth.cli import main

sys.exit(main())
