import json
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, List, Optional

from loguru import logger
from sqlalchemy import create_engine
from sqlalchemy.engine import make_url
from sqlalchemy.orm import sessionmaker

from database.models import Base, EvalQuestion, EvalRun
from evaluation.harness import EvalReport


class DatabaseManager:
    """Histórico de avaliações em SQLite (ou qualquer URL do SQLAlchemy)"""

    def __init__(self, url: str):
        self.url = url
        database = make_url(url).database
        if url.startswith("sqlite") and database and database != ":memory:":
            Path(database).parent.mkdir(parents=True, exist_ok=True)
        self.engine = create_engine(url, echo=False)
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine,
                                         expire_on_commit=False)
        self.init_database()

    def init_database(self):
        """Cria as tabelas se ainda não existirem"""
        Base.metadata.create_all(bind=self.engine)
        logger.debug(f"Banco de histórico pronto: {self.url}")

    @contextmanager
    def get_session(self):
        """Context manager para sessões do banco"""
        session = self.SessionLocal()
        try:
            yield session
            session.commit()
        except Exception as e:
            session.rollback()
            logger.error(f"❌ Erro na sessão do banco: {e}")
            raise
        finally:
            session.close()

    # =================== RUNS ===================
    def save_report(self, report: EvalReport, dataset: Optional[str] = None,
                    config: Optional[Dict[str, Any]] = None) -> int:
        """Grava o relatório e as perguntas; devolve o id da execução"""
        with self.get_session() as session:
            run = EvalRun(
                label=report.label,
                dataset=dataset,
                questions=len(report.records),
                average_f1=report.average_f1,
                category_average_f1=report.category_average_f1,
                average_bleu=report.average_bleu,
                mean_token_cost=report.mean_token_cost,
                evidence_recall=report.evidence_recall,
                generator_calls=report.generator_calls,
                fast_path_hits=report.fast_path_hits,
                construction_seconds=report.construction_seconds,
                retrieval_seconds=report.retrieval_seconds,
                total_seconds=report.total_seconds,
                config_json=json.dumps(config, sort_keys=True) if config else None,
            )
            for record in report.records:
                run.records.append(EvalQuestion(
                    conversation_id=record.conversation_id,
                    category=record.category,
                    question=record.question,
                    gold=record.gold,
                    prediction=record.prediction,
                    f1=record.f1,
                    bleu=record.bleu,
                    token_cost=record.token_cost,
                    evidence_recall=record.evidence_recall,
                    fast_path=record.fast_path,
                    error=record.error,
                ))
            session.add(run)
            session.flush()
            logger.info(f"💾 Execução {run.id} registrada: {report.label}")
            return run.id

    def recent_runs(self, limit: int = 10) -> List[EvalRun]:
        """Últimas execuções, mais recentes primeiro"""
        with self.get_session() as session:
            return session.query(EvalRun).order_by(EvalRun.id.desc()).limit(limit).all()

    def run_questions(self, run_id: int) -> List[EvalQuestion]:
        with self.get_session() as session:
            return session.query(EvalQuestion).filter(EvalQuestion.run_id == run_id).order_by(EvalQuestion.id).all()

    def history_rows(self, limit: int = 10) -> List[Dict[str, Any]]:
        return [
            {
                "run": run.id,
                "created_at": run.created_at.strftime("%Y-%m-%d %H:%M:%S"),
                "label": run.label,
                "questions": run.questions,
                "average_f1": round(run.average_f1, 4),
                "average_bleu": round(run.average_bleu, 4),
                "token_cost": round(run.mean_token_cost, 1),
                "evidence_recall": None if run.evidence_recall is None else round(run.evidence_recall, 4),
            }
            for run in self.recent_runs(limit)
        ]
