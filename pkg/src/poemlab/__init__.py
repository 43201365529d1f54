"""poemlab: entropy-minimum fork choice next to heaviest-chain baselines."""

__version__ = "0.1.0"
