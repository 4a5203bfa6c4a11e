"""Integration tests - end-to-end CLI pipeline runs on a tiny dataset."""
