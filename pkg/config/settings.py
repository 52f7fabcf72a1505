import json
import os
from datetime import timedelta
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Literal, Mapping, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from utils.helpers import parse_duration

# Carregar variáveis de ambiente (credenciais dos provedores)
load_dotenv()


class _DurationModel(BaseModel):
    @field_validator("*", mode="before")
    @classmethod
    def _durations(cls, value: Any, info) -> Any:
        annotation = cls.model_fields[info.field_name].annotation
        if annotation is timedelta and not isinstance(value, timedelta):
            return parse_duration(value)
        return value


# =================== FASE I ===================
class GateConfig(_DurationModel):
    lambda_red: float = Field(0.6, ge=0.0, le=1.0)
    delta_short: timedelta = timedelta(hours=1)
    enabled: bool = True

    @field_validator("delta_short")
    @classmethod
    def _positive(cls, value: timedelta) -> timedelta:
        if value <= timedelta(0):
            raise ValueError("delta_short deve ser positivo")
        return value


class CoarsenConfig(BaseModel):
    lambda_coal: float = Field(0.7, ge=0.0, le=1.0)
    lambda_ovlp: float = Field(0.5, ge=0.0, le=1.0)
    enabled: bool = True


class IngestionConfig(BaseModel):
    window_size: int = Field(20, ge=1)
    extract_retries: int = Field(1, ge=0)


# =================== FASE II ===================
class RetrievalConfig(_DurationModel):
    k_sem: int = Field(20, ge=1)
    k_lex: int = Field(5, ge=1)
    delta_time: timedelta = timedelta(hours=6)
    bridge_gap_min: timedelta = timedelta(hours=1)
    bridge_gap_max: timedelta = timedelta(hours=168)
    bridge_candidates: int = Field(5, ge=1)
    max_hops: int = Field(3, ge=2)
    budget_min: int = Field(8, ge=1)
    budget_max: int = Field(25, ge=1)
    bridges_enabled: bool = True

    @model_validator(mode="after")
    def _check_ranges(self) -> "RetrievalConfig":
        if self.budget_min > self.budget_max:
            raise ValueError("budget_min deve ser <= budget_max")
        if self.bridge_gap_min >= self.bridge_gap_max:
            raise ValueError("bridge_gap_min deve ser < bridge_gap_max")
        return self


class SynthesisConfig(BaseModel):
    tokenizer: str = "whitespace"
    max_path_lines: int = Field(0, ge=0)
    topology_enabled: bool = True
    retries: int = Field(1, ge=0)

    @field_validator("tokenizer")
    @classmethod
    def _known_tokenizer(cls, value: str) -> str:
        if value != "whitespace" and not value.startswith("tiktoken:"):
            raise ValueError("tokenizer deve ser 'whitespace' ou 'tiktoken:<encoding>'")
        return value


# =================== PROVEDORES ===================
class EmbedderConfig(BaseModel):
    kind: Literal["offline", "remote"] = "offline"
    dimension: int = Field(256, ge=1)
    base_url: str = ""
    model: str = ""
    api_key_env: str = "MEMGRAPH_EMBEDDER_API_KEY"
    max_in_flight: int = Field(4, ge=1)
    timeout: float = 30.0


class ExtractorConfig(BaseModel):
    kind: Literal["rule", "anthropic"] = "rule"
    model: str = "claude-sonnet-4-20250514"
    api_key_env: str = "ANTHROPIC_API_KEY"
    max_tokens: int = 2048
    timeout: float = 60.0


class GeneratorConfig(BaseModel):
    kind: Literal["extractive", "echo", "anthropic"] = "extractive"
    model: str = "claude-sonnet-4-20250514"
    api_key_env: str = "ANTHROPIC_API_KEY"
    max_tokens: int = 256
    temperature: float = 0.0
    max_in_flight: int = Field(4, ge=1)
    timeout: float = 30.0


class EvalConfig(BaseModel):
    workers: int = Field(1, ge=1)
    include_timings: bool = True
    record_history: bool = False
    min_average_f1: Optional[float] = None
    min_evidence_recall: Optional[float] = None
    max_mean_token_cost: Optional[float] = None


class Settings(BaseSettings):
    gate: GateConfig = GateConfig()
    coarsen: CoarsenConfig = CoarsenConfig()
    ingestion: IngestionConfig = IngestionConfig()
    retrieval: RetrievalConfig = RetrievalConfig()
    synthesis: SynthesisConfig = SynthesisConfig()
    embedder: EmbedderConfig = EmbedderConfig()
    extractor: ExtractorConfig = ExtractorConfig()
    generator: GeneratorConfig = GeneratorConfig()
    eval: EvalConfig = EvalConfig()

    # Caminhos
    memory_path: str = "memory.jsonl"
    dataset_path: Optional[str] = None
    report_dir: str = "reports"
    database_url: str = "sqlite:///memgraph_runs.db"

    # Logs
    log_level: str = "INFO"
    log_file: str = "logs/memgraph.log"

    # Ablações (ClassVar para não ser campo do modelo)
    ABLATIONS: ClassVar[Dict[str, str]] = {
        "full": "Full",
        "no-gating": "w/o entropy-aware gating",
        "no-coarsening": "w/o coarsening",
        "no-bridges": "w/o bridge discovery",
        "no-topology": "w/o topology-aware reasoning",
    }

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="MEMGRAPH_",
        env_nested_delimiter="__",
        extra="ignore",
    )

    def validate_settings(self):
        """Valida credenciais dos provedores remotos selecionados"""
        required = []
        if self.embedder.kind == "remote":
            required.append(self.embedder.api_key_env)
            if not self.embedder.base_url:
                raise ValueError("embedder.base_url é obrigatório com embedder remoto")
        if self.extractor.kind == "anthropic":
            required.append(self.extractor.api_key_env)
        if self.generator.kind == "anthropic":
            required.append(self.generator.api_key_env)

        missing = sorted({name for name in required if not os.environ.get(name)})
        if missing:
            raise ValueError(f"Configurações obrigatórias não definidas: {', '.join(missing)}")

        return True

    def public_dump(self) -> Dict[str, Any]:
        """Configuração efetiva em JSON (durações em ISO-8601)"""
        return json.loads(self.model_dump_json())


def _deep_merge(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _deep_merge(dict(merged[key]), value)
        else:
            merged[key] = value
    return merged


def load_settings(path: Optional[Union[str, Path]] = None,
                  overrides: Optional[Mapping[str, Any]] = None) -> Settings:
    """Arquivo JSON + overrides da linha de comando sobre o ambiente"""
    data: Dict[str, Any] = {}
    if path:
        config_path = Path(path)
        try:
            data = json.loads(config_path.read_text(encoding="utf-8"))
        except OSError as e:
            raise ValueError(f"arquivo de configuração ilegível: {config_path} ({e})") from e
        except json.JSONDecodeError as e:
            raise ValueError(f"JSON inválido em {config_path}: linha {e.lineno}: {e.msg}") from e
        if not isinstance(data, dict):
            raise ValueError(f"{config_path} deve conter um objeto JSON")
    if overrides:
        data = _deep_merge(data, overrides)
    return Settings(**data)


def apply_ablation(base: Settings, stage: str) -> Settings:
    """Copia as configurações desligando exatamente um estágio"""
    switches = {
        "full": None,
        "no-gating": ("gate", "enabled"),
        "no-coarsening": ("coarsen", "enabled"),
        "no-bridges": ("retrieval", "bridges_enabled"),
        "no-topology": ("synthesis", "topology_enabled"),
    }
    if stage not in switches:
        raise ValueError(f"ablação desconhecida: {stage} (opções: {', '.join(switches)})")
    target = switches[stage]
    if target is None:
        return base.model_copy(deep=True)
    section, flag = target
    updated = getattr(base, section).model_copy(update={flag: False})
    return base.model_copy(update={section: updated}, deep=True)


ABLATION_STAGES: List[str] = list(Settings.ABLATIONS)
