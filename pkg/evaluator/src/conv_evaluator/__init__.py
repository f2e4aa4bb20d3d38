"""Reference external fitness evaluator: a small conv net trained per request."""

PROTOCOL_VERSION = 1
