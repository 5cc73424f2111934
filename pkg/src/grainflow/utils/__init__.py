"""Output helpers shared by the command-line tool."""
