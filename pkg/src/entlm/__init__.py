"""entlm: desk-scale entity-aware multilingual language model toolkit."""

__version__ = "0.1.0"
