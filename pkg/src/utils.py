"""
Utilitários para o sistema TT-ASGFEM
"""

import logging
import sys

from config.settings import LOG_LEVEL, REFINEMENT_TAGS


def setup_logging(debug_mode: bool = False) -> None:
    """Configura o sistema de logging (stderr)"""
    level = logging.DEBUG if debug_mode else getattr(logging, LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S',
        stream=sys.stderr,
        force=True
    )


def print_run_summary(state) -> None:
    """Imprime resumo de uma execução adaptativa"""
    if not state.history:
        print("Nenhuma iteração para exibir.")
        return

    last = state.history[-1]
    print(f"\n=== Resumo da Execução ===")
    print(f"Iterações: {len(state.history)} em {format_duration(sum(r.seconds for r in state.history))}")
    print(f"Status: {'convergiu' if state.converged else 'parou sem atingir a tolerância'}"
          f"{'' if state.success else ' (falha do solver)'}")

    print(f"\nRefinamentos por ramo:")
    for tag, count in state.branch_counts().items():
        print(f"- {REFINEMENT_TAGS.get(tag, tag)} ({tag}): {count}")

    print(f"\nÚltima iteração:")
    print(f"- M={last.M}, d_max={last.d_max}, r_max={last.r_max}")
    print(f"- m-dofs={last.m_dofs}, tt-dofs={last.tt_dofs}, op-dofs={last.op_dofs}")
    print(f"- η_det={last.report.eta_det:.4e}, η_param={last.report.eta_param:.4e}, "
          f"η_disc={last.report.eta_disc:.4e}")
    print(f"- η_all={last.report.eta_all:.4e}")


def format_duration(seconds: float) -> str:
    """Tempo de parede legível: ms abaixo de 1 s, depois s, min e h"""
    if seconds < 0:
        raise ValueError(f"Duração negativa: {seconds}")
    if seconds < 1:
        return f"{seconds * 1000:.0f} ms"
    if seconds < 60:
        return f"{seconds:.1f} s"
    minutes, secs = divmod(int(round(seconds)), 60)
    if minutes < 60:
        return f"{minutes} min {secs:02d} s"
    hours, minutes = divmod(minutes, 60)
    return f"{hours} h {minutes:02d} min"
