"""Self-hostable crowdsourcing service: external HITs, behavior auditing, XML export."""

__version__ = "0.1.0"
