"""Fine-tuning multiplicity metrics, the neighborhood consistency score, and a Monte Carlo
check of the consistency guarantee, on seeded surrogate classifiers over tabular data."""

__version__ = "0.1.0"
