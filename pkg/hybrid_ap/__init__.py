import sys

# Check that we're not running on an unsupported Python version.
if sys.version_info < (3, 8):
    print("hybrid_ap requires Python 3.8 or above.")
    sys.exit(1)

__version__ = "0.1.0"
