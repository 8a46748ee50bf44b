"""Fetch, parse and cross-check domain registration data from WHOIS and RDAP."""

__version__ = "0.1.0"
