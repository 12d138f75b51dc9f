"""Module execution hook: ``python -m exchlab.cli <subcommand> ...``."""

from exchlab.cli.main import main

raise SystemExit(main())
