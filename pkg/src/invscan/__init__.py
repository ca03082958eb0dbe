"""Inventory-driven vulnerability scanning suite.

Maps software/OS/hardware inventories to candidate CPE names, matches
them against an NVD-derived vulnerability database, and ships the whole
flow behind an authenticated client/server protocol.
"""

__version__ = "0.1.0"
