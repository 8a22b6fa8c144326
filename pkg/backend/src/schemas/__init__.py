"""
Schemas package - pydantic models for everything written to disk
"""
