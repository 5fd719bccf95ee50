"""
Mutual relation modeling encoder: joint query / exemplar token streams
"""
