"""Configuration tables and environment set-up."""
