"""
Hierarquia de exceções do motor de roteamento.

ValidationFailure cobre entradas inválidas (saída 1 na CLI, 4xx na API);
os demais EngineError são falhas de execução (saída 2 na CLI, 5xx na API).
"""

from typing import List, Optional, Tuple


class EngineError(Exception):
    """Erro base do motor"""


class ValidationFailure(EngineError):
    """Entrada, configuração ou dados inválidos"""


class ConfigError(ValidationFailure):
    """Arquivo de configuração ausente ou malformado"""


class DatasetFormatError(ValidationFailure):
    """Registro inválido em arquivo de dataset"""


class PoolValidationError(ValidationFailure):
    """Pool de modelos viola um ou mais invariantes"""

    def __init__(self, violations: List[Tuple[str, str]]):
        self.violations = violations
        codes = sorted({code for code, _ in violations})
        detail = "; ".join(message for _, message in violations)
        super().__init__(f"Pool inválido ({', '.join(codes)}): {detail}")

    @property
    def codes(self) -> List[str]:
        return [code for code, _ in self.violations]


class EmptyQueryError(ValidationFailure):
    """Consulta vazia após remover espaços"""


class PoolMismatchError(ValidationFailure):
    """Scorer treinado para outra ordenação do pool"""


class LengthMismatchError(ValidationFailure):
    """Vetor de scores com tamanho diferente do pool"""


class BadKError(ValidationFailure):
    """k fora de [1, N]"""


class DegenerateSetsError(ValidationFailure):
    """Conjuntos I+ / I- vazios ou sobrepostos"""


class EmptyOutGroupError(ValidationFailure):
    """Conjunto de consultas negativas vazio"""


class TooFewQueriesError(ValidationFailure):
    """Menos consultas do que clusters"""


class EmptyDatasetError(ValidationFailure):
    """Dataset de treino vazio"""


class LabelLengthMismatchError(ValidationFailure):
    """Vetor de rótulos com tamanho diferente do pool"""


class EmptyLayerError(ValidationFailure):
    """Camada anterior sem modelos ativos"""


class LayerTooEarlyError(ValidationFailure):
    """Fusão pedida antes da camada 2"""


class MissingAnswersError(ValidationFailure):
    """Prompt de camada intermediária/final sem respostas anteriores"""


class EmptyTruthSetError(ValidationFailure):
    """Nenhum modelo correto para o caso de teste"""


class BadTruthSizeError(ValidationFailure):
    """Top-3 de referência sem exatamente 3 modelos"""


class EmptyTestsetError(ValidationFailure):
    """Conjunto de teste vazio"""


class RewardOutOfRangeError(EngineError):
    """Oráculo de recompensa devolveu valor fora de [0, 1]"""


class CheckpointError(EngineError):
    """Falha ao ler ou gravar checkpoint do scorer"""


class CheckpointIoError(CheckpointError):
    """Erro de E/S no checkpoint"""


class VersionMismatchError(CheckpointError):
    """Cabeçalho, versão ou tamanho do checkpoint incompatível"""


class BackendError(EngineError):
    """Falha ao invocar um modelo"""


class BackendUnavailableError(BackendError):
    """Backend não configurado ou inalcançável"""


class BackendTimeoutError(BackendError):
    """Tempo esgotado após todas as tentativas"""


class BackendHttpError(BackendError):
    """Resposta HTTP de erro do provedor"""

    def __init__(self, status: int, detail: Optional[str] = None):
        self.status = status
        super().__init__(f"HTTP {status}: {detail or ''}".strip())


class MalformedProviderResponseError(BackendError):
    """Corpo de resposta fora do protocolo chat-completions"""


class UnknownSimModelError(BackendError):
    """Modelo sem SimModelSpec registrado no simulador"""


class AllModelsFailedError(EngineError):
    """Todos os modelos de uma camada falharam"""
