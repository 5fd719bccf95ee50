"""
Test suite for the exemplar counting service
"""
