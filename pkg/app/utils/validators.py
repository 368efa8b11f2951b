import math
from typing import List, Optional, Tuple

from app.models.schemas import ModelPool, ModelProfile, RoutingConfig
from app.utils.exceptions import BadKError, PoolValidationError

# Códigos de violação reportados em PoolValidationError
DUPLICATE_MODEL_ID = "DuplicateModelId"
NON_POSITIVE_LATENCY = "NonPositiveLatency"
BAD_KEY_INDEX_PERMUTATION = "BadKeyIndexPermutation"
NEGATIVE_PRICE = "NegativePrice"
NON_POSITIVE_CONTEXT = "NonPositiveContextLimit"
POOL_TOO_SMALL = "PoolTooSmall"


class PoolValidator:
    """Validador dos perfis do pool de modelos"""

    @staticmethod
    def validate_prices(profile: ModelProfile) -> Tuple[bool, Optional[str]]:
        """Preços devem ser finitos e >= 0"""
        for name in ("input_price", "output_price"):
            price = getattr(profile, name)
            if not math.isfinite(price) or price < 0:
                return False, f"{profile.model_id}: {name} inválido ({price})"
        return True, None

    @staticmethod
    def validate_latency(profile: ModelProfile) -> Tuple[bool, Optional[str]]:
        """Latência estimada deve ser > 0"""
        if not math.isfinite(profile.latency_estimate) or profile.latency_estimate <= 0:
            return False, f"{profile.model_id}: latency_estimate deve ser > 0 ({profile.latency_estimate})"
        return True, None

    @staticmethod
    def validate_context_limit(profile: ModelProfile) -> Tuple[bool, Optional[str]]:
        if profile.context_limit <= 0:
            return False, f"{profile.model_id}: context_limit deve ser > 0 ({profile.context_limit})"
        return True, None

    @staticmethod
    def validate_unique_ids(pool: ModelPool) -> Tuple[bool, Optional[str]]:
        """model_id único dentro do pool"""
        seen = set()
        duplicates = []
        for model_id in pool.model_ids:
            if model_id in seen and model_id not in duplicates:
                duplicates.append(model_id)
            seen.add(model_id)
        if duplicates:
            return False, f"model_id repetido: {', '.join(duplicates)}"
        return True, None

    @staticmethod
    def validate_key_indices(pool: ModelPool) -> Tuple[bool, Optional[str]]:
        """key_index deve ser uma permutação de 0..N-1"""
        indices = sorted(p.key_index for p in pool.profiles)
        if indices != list(range(pool.N)):
            return False, f"key_index não é permutação de 0..{pool.N - 1}: {indices}"
        return True, None

    @staticmethod
    def validate_size(pool: ModelPool) -> Tuple[bool, Optional[str]]:
        if pool.N < 2:
            return False, f"Pool precisa de ao menos 2 modelos (N={pool.N})"
        return True, None


def validate_pool(pool: ModelPool) -> ModelPool:
    """
    Valida o pool completo

    Retorna o próprio pool se todos os invariantes valem; caso contrário
    levanta PoolValidationError listando todas as violações.
    """
    violations: List[Tuple[str, str]] = []

    valid, error = PoolValidator.validate_size(pool)
    if not valid:
        violations.append((POOL_TOO_SMALL, error))

    valid, error = PoolValidator.validate_unique_ids(pool)
    if not valid:
        violations.append((DUPLICATE_MODEL_ID, error))

    valid, error = PoolValidator.validate_key_indices(pool)
    if not valid:
        violations.append((BAD_KEY_INDEX_PERMUTATION, error))

    for profile in pool.profiles:
        valid, error = PoolValidator.validate_prices(profile)
        if not valid:
            violations.append((NEGATIVE_PRICE, error))

        valid, error = PoolValidator.validate_latency(profile)
        if not valid:
            violations.append((NON_POSITIVE_LATENCY, error))

        valid, error = PoolValidator.validate_context_limit(profile)
        if not valid:
            violations.append((NON_POSITIVE_CONTEXT, error))

    if violations:
        raise PoolValidationError(violations)

    return pool


def validate_routing(config: RoutingConfig, pool: ModelPool) -> RoutingConfig:
    """Restrições que dependem do tamanho do pool (k <= N)"""
    if not 1 <= config.models_per_layer <= pool.N:
        raise BadKError(f"models_per_layer={config.models_per_layer} fora de [1, {pool.N}]")
    return config
