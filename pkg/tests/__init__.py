"""Unit tests for deepfrc."""
