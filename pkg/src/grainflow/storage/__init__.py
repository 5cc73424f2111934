"""Model file persistence."""
