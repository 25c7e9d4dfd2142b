import sys

from nfsic.cli import main

sys.exit(main())
