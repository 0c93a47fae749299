"""
Configurações do sistema TT-ASGFEM
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Carrega variáveis de ambiente
load_dotenv()

# Configurações de logging
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
DEBUG_MODE = os.getenv("DEBUG_MODE", "false").lower() == "true"

# Configurações de arquivo
RESULTS_DIR = Path(os.getenv("RESULTS_DIR", str(Path(__file__).parent.parent / "results")))

# Formato TT
RANK_CAP = int(os.getenv("RANK_CAP", "64"))

# Solver ALS
ALS_TOL = float(os.getenv("ALS_TOL", "1e-12"))
ALS_MAX_SWEEPS = int(os.getenv("ALS_MAX_SWEEPS", "50"))
LOCAL_DENSE_LIMIT = int(os.getenv("LOCAL_DENSE_LIMIT", "2000"))

# Quadratura física do coeficiente (células por direção x pontos por direção)
QUAD_CELLS = int(os.getenv("QUAD_CELLS", "25"))
QUAD_ORDER = int(os.getenv("QUAD_ORDER", "4"))
COEFF_MAX_RANK = int(os.getenv("COEFF_MAX_RANK", "10"))

# Monte Carlo
N_MC = int(os.getenv("N_MC", "250"))
MC_MAX_CONCURRENT = int(os.getenv("MC_MAX_CONCURRENT", "4"))

DEFAULT_SEED = int(os.getenv("DEFAULT_SEED", "1234"))

# Tags de refinamento
REFINEMENT_TAGS = {
    "DET": "Refinamento de malha",
    "PARAM": "Refinamento estocástico",
    "RANK": "Aumento de posto"
}
