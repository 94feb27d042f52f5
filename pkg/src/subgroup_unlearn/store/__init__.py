"""Artifact store: atomic writes, run directories and manifests."""
