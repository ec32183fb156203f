"""Single-node reproducible research platform.

Turns a Git repository with a REES environment definition and a dataset
manifest into a built, runnable, shareable, archivable, and exportable
project, with datasets served from an RDMS and all lifecycle events
observable over a REST + server-sent-events API.
"""

__version__ = "0.1.0"
