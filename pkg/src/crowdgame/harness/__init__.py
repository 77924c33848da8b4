"""Configuration, experiment drivers and the ``crowdgame`` CLI."""
