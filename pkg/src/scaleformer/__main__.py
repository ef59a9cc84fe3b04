import sys

from scaleformer.cli import main

sys.exit(main())
