"""HTTP face of the toolkit: a FastAPI app wrapping the core package."""

from .app import app, create_app

__all__ = ["app", "create_app"]
