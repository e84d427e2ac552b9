"""Area PEB versus the UE SNR threshold for P1, P2 and CFS."""
from _common import run

if __name__ == "__main__":
    run("snr-sweep", ["--gammas", "10,15,20,25,30"], __doc__)
