"""Single-point PEB map over the (range, azimuth) grid for each design."""
from _common import run

if __name__ == "__main__":
    run("peb-map", [], __doc__)
