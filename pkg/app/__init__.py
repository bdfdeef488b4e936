"""Configuración, modelos de datos y punto de entrada de la CLI de TBES"""
