"""stochsym tests."""
