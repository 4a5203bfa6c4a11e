"""Unit tests - one package per library sub-package, small in-memory models."""
