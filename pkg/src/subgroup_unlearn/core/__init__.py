"""Core utilities and data models.

The modules in this package define the configuration data structures
(types), the error hierarchy, configuration loading, hashing helpers
and logging setup used throughout the project.
"""
