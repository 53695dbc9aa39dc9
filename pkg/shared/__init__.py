"""Shared configuration, logging, errors and persistence for track-reid."""
