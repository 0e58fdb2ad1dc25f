import sys

from avband.main import main

sys.exit(main())
