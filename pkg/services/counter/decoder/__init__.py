"""
Convolutional density decoder
"""
