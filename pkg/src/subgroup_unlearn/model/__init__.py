"""Dual-encoder model, parameter sets and the checkpoint codec."""
