"""Joint reasoning over a QA context and a retrieved knowledge subgraph."""
from .errors import DataError, KGFormatError, NumericalError, WorkgraphError
from .graph_builder import WorkingGraph, build_working_graph
from .kg_store import KnowledgeGraph, augment_inverse_edges, load_kg, read_kg
from .model import GraphReasoner, ModelConfig, TokenVocab, collate
from .retrieval import QAExample, link_entities, prune_subgraph, retrieve_subgraph
from .trainer import QAItem, TrainConfig, evaluate, train

__all__ = [
    "DataError", "KGFormatError", "NumericalError", "WorkgraphError",
    "WorkingGraph", "build_working_graph",
    "KnowledgeGraph", "augment_inverse_edges", "load_kg", "read_kg",
    "GraphReasoner", "ModelConfig", "TokenVocab", "collate",
    "QAExample", "link_entities", "prune_subgraph", "retrieve_subgraph",
    "QAItem", "TrainConfig", "evaluate", "train",
]
__version__ = "0.1.0"
