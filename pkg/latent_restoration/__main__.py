import sys

from latent_restoration.cli.main import main

sys.exit(main())
