"""Binary-vulnerability gadget pipeline: pseudocode listings in, per-gadget verdicts out."""

__version__ = "0.1.0"

SCHEMA_VERSION = "1"
