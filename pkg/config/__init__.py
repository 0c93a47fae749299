"""
Configurações do sistema TT-ASGFEM
"""
