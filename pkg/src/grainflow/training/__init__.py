"""Training loop, metrics output and gradient checking."""
