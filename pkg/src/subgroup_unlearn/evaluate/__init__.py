"""Zero-shot accuracy, restoration ratios, Score and retrieval."""
