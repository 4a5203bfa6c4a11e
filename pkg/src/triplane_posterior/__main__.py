"""Allow running package with python -m triplane_posterior."""

from triplane_posterior.cli import app

if __name__ == "__main__":
    app()
