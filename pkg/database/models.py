from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class EvalRun(Base):
    __tablename__ = "eval_runs"

    id = Column(Integer, primary_key=True, autoincrement=True)
    label = Column(String(100), nullable=False)  # Full, w/o bridge discovery, k_sem=10...
    dataset = Column(String(500))
    questions = Column(Integer, default=0)
    average_f1 = Column(Float, default=0.0)
    category_average_f1 = Column(Float, default=0.0)
    average_bleu = Column(Float, default=0.0)
    mean_token_cost = Column(Float, default=0.0)
    evidence_recall = Column(Float)
    generator_calls = Column(Integer, default=0)
    fast_path_hits = Column(Integer, default=0)
    construction_seconds = Column(Float, default=0.0)
    retrieval_seconds = Column(Float, default=0.0)
    total_seconds = Column(Float, default=0.0)
    config_json = Column(Text)
    created_at = Column(DateTime, default=datetime.now)

    # Relacionamento
    records = relationship("EvalQuestion", back_populates="run", cascade="all, delete-orphan")


class EvalQuestion(Base):
    __tablename__ = "eval_questions"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("eval_runs.id"), nullable=False)
    conversation_id = Column(String(100))
    category = Column(String(20), nullable=False)  # MultiHop, Temporal, OpenDomain, SingleHop
    question = Column(Text, nullable=False)
    gold = Column(Text)
    prediction = Column(Text)
    f1 = Column(Float, default=0.0)
    bleu = Column(Float, default=0.0)
    token_cost = Column(Integer, default=0)
    evidence_recall = Column(Float)
    fast_path = Column(String(20))
    error = Column(Text)

    # Relacionamento
    run = relationship("EvalRun", back_populates="records")
