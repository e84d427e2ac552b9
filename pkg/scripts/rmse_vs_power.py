"""Monte-Carlo MUSIC RMSE and PEB versus transmit power for P1, P2 and CFS."""
from _common import run

if __name__ == "__main__":
    run("rmse-sweep", ["--powers=-30,-25,-20,-15,-10,-5,0"], __doc__)
