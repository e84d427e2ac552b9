"""Problem sizes and CFS operation count (default scenario unless --tier reduced)."""
from _common import run

if __name__ == "__main__":
    run("complexity-report", [], __doc__)
