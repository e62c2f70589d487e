"""Configuration and command plumbing shared by the CLI."""
