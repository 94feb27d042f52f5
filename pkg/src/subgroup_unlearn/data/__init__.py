"""Synthetic superclass/subgroup data, style transforms and task splits."""
