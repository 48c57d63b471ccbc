import sys

from .cli_bench import main

sys.exit(main())
