"""Conversational text-to-SQL: schema linking, relation-aware encoding,
a frozen bimodal SQL encoder, grammar-constrained decoding, and evaluation."""

__version__ = "0.1.0"
