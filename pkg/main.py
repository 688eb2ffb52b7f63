#!/usr/bin/env python3
import sys

try:
    from hybrid_ap import main

    # Run the command line entry point
    sys.exit(main.main())
except ImportError as e:
    print("Unable to import hybrid_ap.main:", e)
    sys.exit(1)
