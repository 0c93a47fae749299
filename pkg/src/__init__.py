"""
TT-ASGFEM - Galerkin estocástico adaptativo em formato tensor-train
para EDPs elípticas com coeficiente lognormal
"""

__version__ = "1.0.0"
__author__ = "TT-ASGFEM Team"
