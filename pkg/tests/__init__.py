"""Tests for the MultiAC6 toolkit."""
