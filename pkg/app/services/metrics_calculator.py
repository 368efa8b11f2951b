import logging
from typing import Dict, List, Optional, Sequence, Set

import numpy as np

from app.models.schemas import LabeledExample, ScoreVector
from app.utils.exceptions import BadTruthSizeError, EmptyTruthSetError, ValidationFailure

logger = logging.getLogger(__name__)

# Pontuação por tamanho da interseção entre top-3 previsto e de referência
AGREEMENT_BY_OVERLAP = {3: 1.0, 2: 0.6, 1: 0.3, 0: 0.0}

# Com λ=0.5, acerto com recompensa 0 dá rótulo exatamente 0.5 e conta como acerto
CORRECT_LABEL_CUTOFF = 0.5


class MetricsCalculator:
    """Métricas de qualidade do scorer (dependem apenas da ordem dos scores)"""

    @staticmethod
    def top_indices(scores, n: int) -> List[int]:
        """Índices dos n maiores scores; empate pelo menor key_index"""
        values = scores.values if isinstance(scores, ScoreVector) else tuple(scores)
        return sorted(range(len(values)), key=lambda j: (-values[j], j))[:n]

    @staticmethod
    def top1_hit(predicted, truth_correct_set: Set[int]) -> int:
        if not truth_correct_set:
            raise EmptyTruthSetError("Nenhum modelo correto para o caso")
        return int(MetricsCalculator.top_indices(predicted, 1)[0] in truth_correct_set)

    @staticmethod
    def top3_hit(predicted, truth_correct_set: Set[int]) -> int:
        if not truth_correct_set:
            raise EmptyTruthSetError("Nenhum modelo correto para o caso")
        return int(bool(set(MetricsCalculator.top_indices(predicted, 3)) & set(truth_correct_set)))

    @staticmethod
    def top3_agree(predicted, truth_top3: Set[int]) -> float:
        if len(truth_top3) != 3:
            raise BadTruthSizeError(f"Top-3 de referência com {len(truth_top3)} modelos")
        if len(predicted) < 3:
            raise ValidationFailure("Top-3-Agree exige N >= 3")
        overlap = len(set(MetricsCalculator.top_indices(predicted, 3)) & set(truth_top3))
        return AGREEMENT_BY_OVERLAP[overlap]

    @staticmethod
    def truth_correct_set(example: LabeledExample) -> Set[int]:
        if example.correct is not None:
            return {j for j, ok in enumerate(example.correct) if ok}
        return {j for j, label in enumerate(example.labels) if label >= CORRECT_LABEL_CUTOFF}

    @staticmethod
    def truth_top3(example: LabeledExample) -> Set[int]:
        return set(MetricsCalculator.top_indices(example.labels, 3))

    @staticmethod
    def scorer_quality(
        predictions: Sequence,
        examples: Sequence[LabeledExample]
    ) -> Dict[str, Optional[float]]:
        """
        Médias de Top-1-Hit, Top-3-Hit e Top-3-Agree

        Casos sem nenhum modelo correto ficam de fora das três médias.
        """
        top1, top3, agree = [], [], []
        for predicted, example in zip(predictions, examples):
            truth = MetricsCalculator.truth_correct_set(example)
            if not truth:
                continue
            top1.append(MetricsCalculator.top1_hit(predicted, truth))
            top3.append(MetricsCalculator.top3_hit(predicted, truth))
            if len(example.labels) >= 3:
                agree.append(MetricsCalculator.top3_agree(predicted, MetricsCalculator.truth_top3(example)))

        excluded = len(examples) - len(top1)
        if excluded:
            logger.info(f"{excluded} caso(s) sem modelo correto excluídos das métricas do scorer")

        def mean(values):
            return float(np.mean(values)) if values else None

        return {
            "n_cases": len(top1),
            "top1_hit": mean(top1),
            "top3_hit": mean(top3),
            "top3_agree": mean(agree),
        }
