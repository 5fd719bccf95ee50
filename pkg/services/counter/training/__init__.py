"""
Training, evaluation and comparison suites
"""
