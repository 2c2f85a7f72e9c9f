"""Streaming detection of DNS exfiltration by distinct-information heavy hitters."""
