"""Dataclass models for utterances, features, models and reports"""
