"""Movie genre classification with a metadata knowledge graph.

Stage 1 builds a domain KG from movie metadata and embeds it with a
translate model; stage 2 fuses text, image and KG features under a shared
sigmoid gate trained against count-based pseudo-labels, with a
genre-centroid contrastive term and a multi-label classifier head.
"""

__version__ = "0.1.0"
