"""Layer selection, adapters and the forget, remind and restore stages."""
