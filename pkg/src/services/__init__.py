"""Pipeline services: corpus, features, training, conversion and evaluation"""
