"""Multimodal top-N recommender."""
