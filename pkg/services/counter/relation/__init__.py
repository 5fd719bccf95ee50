"""
Relation learner: prototype refinement and correlation volumes
"""
