"""Command-line entrypoint and the interactive token-to-region HTTP service."""

from tokenforge.app.http import (
    LoadedCheckpoint,
    ServiceState,
    create_app,
    load_service_checkpoint,
    run_query,
    serve,
    snap_dims,
)

__all__ = [
    "LoadedCheckpoint",
    "ServiceState",
    "create_app",
    "load_service_checkpoint",
    "run_query",
    "serve",
    "snap_dims",
]
