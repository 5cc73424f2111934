"""Image ingestion, datasets and the synthetic defect generator."""
