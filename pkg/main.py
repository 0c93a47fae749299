"""
Sistema TT-ASGFEM - Arquivo principal
"""

import argparse
import logging
import sys
import time

from config.settings import DEBUG_MODE
from src.bench import cli_run
from src.utils import format_duration, setup_logging

logger = logging.getLogger(__name__)


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        description="Galerkin estocástico adaptativo em formato TT para difusão lognormal"
    )
    parser.add_argument("config", help="Arquivo de configuração KEY=VALUE do experimento")
    parser.add_argument("--full", action="store_true",
                        help="Inclui L=100 e s_max=100 no estudo do coeficiente (execução longa)")
    parser.add_argument("--debug", action="store_true", help="Ativa logs de depuração")
    parser.add_argument("--output-dir", default=None, help="Substitui OUTPUT_DIR da configuração")
    return parser.parse_args(argv)


def main(argv=None) -> int:
    """Função principal do sistema"""
    args = parse_args(argv)
    setup_logging(args.debug or DEBUG_MODE)

    start = time.perf_counter()
    logger.info(f"=== Experimento {args.config} ===")
    code = cli_run(args.config, full=args.full, output_dir=args.output_dir)
    elapsed = format_duration(time.perf_counter() - start)

    if code == 0:
        logger.info(f"✓ Concluído em {elapsed}")
    else:
        logger.error(f"❌ Encerrado com código {code} após {elapsed}")
    return code


if __name__ == "__main__":
    sys.exit(main())
