"""
Synthetic multi-class scenes, density targets and on-disk datasets
"""
