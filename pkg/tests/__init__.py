"""Tests for creador_tests package."""

