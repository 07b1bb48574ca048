"""History-semantic-graph conversational KBQA: logical forms, graph memory and a numpy parser."""

__version__ = "0.1.0"
