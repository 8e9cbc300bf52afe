import sys

from tldpinn.cli import main

sys.exit(main())
