"""Validation subpackage.

Contains helpers for validating configuration files, reports, stage
logs and run manifests against the published schemas in ``schemas/``.
"""
