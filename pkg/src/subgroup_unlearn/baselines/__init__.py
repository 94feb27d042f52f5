"""Reference unlearning baselines: FT, GA, FISHER_NOISE, LIP and EMMN."""
