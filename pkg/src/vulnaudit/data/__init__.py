"""Shipped rule packs, prompt templates and verification harnesses."""
