"""Core data models, errors, logging and storage layer."""
