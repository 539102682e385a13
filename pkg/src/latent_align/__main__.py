"""``python -m latent_align``."""

from .cli import main

main()
