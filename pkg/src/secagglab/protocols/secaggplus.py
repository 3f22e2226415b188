"""SecAgg+ : the double-masking round restricted to a random k-regular neighbor graph."""

from .secagg import SecAggPlusSession, neighbor_degree, neighbor_graph

__all__ = ["SecAggPlusSession", "neighbor_degree", "neighbor_graph"]
