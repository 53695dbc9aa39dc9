"""Track aggregation network, metrics, training and retrieval evaluation."""
