import sys

from gencoq.cli import main

sys.exit(main())
