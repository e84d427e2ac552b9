"""Receive beampattern over the (range, azimuth) search grid for each design."""
from _common import run

if __name__ == "__main__":
    run("beampattern", ["--method", "P1,P2,CFS"], __doc__)
