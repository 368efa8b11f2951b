import json
import logging
from pathlib import Path
from typing import Iterable, List, Type, TypeVar, Union

from pydantic import BaseModel, ValidationError

from app.models.schemas import LabeledExample, RawExample
from app.utils.exceptions import DatasetFormatError

logger = logging.getLogger(__name__)

T = TypeVar("T", bound=BaseModel)


def read_jsonl(path: Union[str, Path], model: Type[T]) -> List[T]:
    """Lê um arquivo com um registro JSON por linha, validando cada um"""
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(f"Arquivo não encontrado: {path}")

    records = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(model.model_validate(json.loads(line)))
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"{path}:{line_number}: JSON inválido ({e})") from e
            except ValidationError as e:
                raise DatasetFormatError(f"{path}:{line_number}: registro inválido ({e})") from e

    logger.info(f"{len(records)} registros lidos de {path}")
    return records


def write_jsonl(records: Iterable[Union[BaseModel, dict]], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            data = record.model_dump(mode="json", exclude_none=True) if isinstance(record, BaseModel) else record
            f.write(json.dumps(data, ensure_ascii=False, sort_keys=True))
            f.write("\n")
            count += 1

    logger.info(f"{count} registros gravados em {path}")
    return path


def read_raw(path: Union[str, Path]) -> List[RawExample]:
    return read_jsonl(path, RawExample)


def read_labeled(path: Union[str, Path]) -> List[LabeledExample]:
    return read_jsonl(path, LabeledExample)
