"""Servicios de segmentación, codificación y evaluación"""
