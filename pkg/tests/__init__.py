"""Tests for evt-autoselect."""
