from datetime import datetime

from sqlalchemy import Boolean, Column, DateTime, Float, ForeignKey, Integer, String
from sqlalchemy.orm import declarative_base, relationship

Base = declarative_base()


class Episode(Base):
    __tablename__ = "episodes"
    id = Column(Integer, primary_key=True, autoincrement=True)
    run_index = Column(Integer, nullable=False)
    seed = Column(Integer, nullable=False)
    method = Column(String(8), nullable=False)
    reached_targets = Column(Boolean, default=False, nullable=False)
    termination = Column(String(32))
    dynamic_actions = Column(Integer, default=0, nullable=False)
    refinement_actions = Column(Integer, default=0, nullable=False)
    area_ratio = Column(Float)
    volume_ratio = Column(Float)
    delta_elongation = Column(Float)
    created_on = Column(DateTime, default=datetime.utcnow)
    actions = relationship(
        "EpisodeAction",
        back_populates="episode",
        cascade="all, delete-orphan",
        order_by="EpisodeAction.index",
    )


class EpisodeAction(Base):
    __tablename__ = "episode_actions"
    id = Column(Integer, primary_key=True, autoincrement=True)
    episode_id = Column(Integer, ForeignKey("episodes.id"), nullable=False)
    index = Column(Integer, nullable=False)
    stage = Column(String(16), nullable=False)
    action = Column(String(16), nullable=False)
    area_ratio = Column(Float)
    volume_ratio = Column(Float)
    elongation = Column(Float)
    delta_elongation = Column(Float)
    crumple = Column(Float)
    gripper_distance = Column(Float)
    episode = relationship("Episode", back_populates="actions")


def create_all(engine):
    """Create tables from models"""
    Base.metadata.create_all(engine)


def drop_all(engine):
    """Drop all tables created"""
    Base.metadata.drop_all(engine)
