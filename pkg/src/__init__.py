"""Reference-based foreign accent conversion"""
