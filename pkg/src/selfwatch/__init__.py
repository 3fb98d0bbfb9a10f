"""Self-monitoring process supervisor."""
