"""
Adaptive retrieval-augmented question answering - core modules
"""
