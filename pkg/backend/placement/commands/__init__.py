# Subcommand modules for the command line
