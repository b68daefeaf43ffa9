import logging

from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from cdmp_bag.main import EpisodeTrace
from cdmp_bag.models import Episode, EpisodeAction, create_all, drop_all
from cdmp_bag.utils import database_url


class EpisodeStore:
    """Episode records in a SQL database"""

    def __init__(self, database: str = None):
        """Constructor

        Args:
            database (str): Engine URL e.g sqlite:///:memory:. Defaults to the
                environment's, else a sqlite file in the app directory.
        """
        self.url = database_url(database)
        self.engine = create_engine(self.url)
        self.Session = sessionmaker(bind=self.engine)
        self.session = self.Session()
        create_all(self.engine)

    def add(self, trace: EpisodeTrace, method: str, run_index: int) -> int:
        """Record an episode with every action

        Returns:
            int: Episode id.
        """
        final = trace.final
        episode = Episode(
            run_index=run_index,
            seed=trace.seed,
            method=method,
            reached_targets=trace.reached_targets,
            termination=trace.termination,
            dynamic_actions=trace.dynamic_actions,
            refinement_actions=trace.refinement_actions,
            area_ratio=final.area_ratio,
            volume_ratio=final.volume_ratio,
            delta_elongation=final.delta_elongation,
        )
        for record in trace.records:
            episode.actions.append(
                EpisodeAction(
                    index=record.index,
                    stage=record.stage,
                    action=record.action,
                    area_ratio=record.report.area_ratio,
                    volume_ratio=record.report.volume_ratio,
                    elongation=record.report.elongation,
                    delta_elongation=record.report.delta_elongation,
                    crumple=record.crumple,
                    gripper_distance=record.gripper_distance,
                )
            )
        self.session.add(episode)
        self.session.commit()
        logging.debug(f"Stored episode {episode.id} (run {run_index}, {method})")
        return episode.id

    def episodes(self, method: str = None) -> list:
        query = self.session.query(Episode)
        if method:
            query = query.filter_by(method=method)
        return query.order_by(Episode.id).all()

    def total(self, method: str = None) -> int:
        query = self.session.query(Episode)
        if method:
            query = query.filter_by(method=method)
        return query.count()

    def clear(self) -> None:
        """Drop every record"""
        self.session.close()
        drop_all(self.engine)
        create_all(self.engine)
        logging.warning(f"Cleared episode records at {self.url}")

    def close(self) -> None:
        self.session.close()
        self.engine.dispose()
