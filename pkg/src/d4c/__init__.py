"""Drug-oriented text mining: corpus annotation, similarity models, and a knowledge graph."""

__version__ = "0.1.0"
