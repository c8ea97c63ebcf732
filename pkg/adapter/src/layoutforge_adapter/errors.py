"""Exception types raised by the adapter."""

from __future__ import annotations


class AdapterError(Exception):
    """Unusable input: a broken image, config file, or cache directory."""


class ModelUnavailable(Exception):
    """One model call could not be served.

    Raised by a transport when an endpoint is unreachable or not
    configured, or when replay finds no cached response for the request
    hash.  Extraction catches this per stage and degrades to a partial
    bundle instead of aborting.
    """

    def __init__(self, model: str, reason: str):
        super().__init__(f"{model}: {reason}")
        self.model = model
        self.reason = reason


class BadResponse(ModelUnavailable):
    """A model (or cache entry) answered with JSON we cannot use."""
