"""Multimodal hypergraph survival prediction with memory-bank compensation
for missing modalities."""

__version__ = "0.1.0"
