import sys

from flexqueue.cli import main

sys.exit(main())
