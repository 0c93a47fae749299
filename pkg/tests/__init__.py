"""
Testes para o sistema TT-ASGFEM
"""
