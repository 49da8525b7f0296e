"""Malicious browser-extension detection."""
