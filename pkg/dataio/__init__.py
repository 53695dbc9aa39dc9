"""Feature files, manifests, frame sampling, synthetic corpora and checkpoints."""
