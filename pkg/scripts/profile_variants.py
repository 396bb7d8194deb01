"""Print the analytic params/FLOPs comparison for variants B/L/H."""

import sys

from serpent.cli import main

if __name__ == "__main__":
    res = sys.argv[1] if len(sys.argv) > 1 else "64,128,256"
    sys.exit(main(["profile", "--resolutions", res, "model.num_scales=4"]))
