"""End-to-end prediction: retrieve demos, build the prompt, query, parse.

A Pipeline bundles everything an episode needs: the seen dataset, each demo's
extracted key actions, selection features for the pool, and a gateway.  The
``selection`` strategy is either ``dynamics`` (cosine top-K over dynamics
features) or ``random`` (seeded uniform sample without replacement, the
ablation baseline).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .demo_store import Dataset, Demonstration, ObjectRecord, Observation
from .discretize import quantize_object, quantize_pose
from .dynamics import (
    DEFAULT_MODE,
    DemoEmbedding,
    DynamicsFeature,
    DynamicsPredictor,
    FeatureMode,
    SelectionResult,
    embed_dataset,
    embed_query,
    dynamics_feature,
    pool_features,
    select_top_k,
)
from .errors import XicmError
from .gateway import CompletionRecord, EpisodeContext, Gateway
from .keyframes import DEFAULT_VELOCITY_EPSILON, KeyActionSequence, extract_keyframes
from .prompting import ActionPrediction, DemoBlock, PromptBundle, build_prompt, parse_prediction
from .sim import stable_seed

SELECTION_DYNAMICS = "dynamics"
SELECTION_RANDOM = "random"


@dataclass
class EpisodePrediction:
    """Everything produced while answering one query."""

    bundle: PromptBundle
    record: CompletionRecord
    prediction: ActionPrediction
    selection: SelectionResult


@dataclass
class Pipeline:
    dataset: Dataset
    keyactions: dict[str, KeyActionSequence]
    embeddings: list[DemoEmbedding]
    predictor: DynamicsPredictor | None
    gateway: Gateway
    mode: FeatureMode = DEFAULT_MODE
    k: int = 18
    selection: str = SELECTION_DYNAMICS
    pool: list[DynamicsFeature] = field(default_factory=list)

    @classmethod
    def build(
        cls,
        dataset: Dataset,
        gateway: Gateway,
        predictor: DynamicsPredictor | None = None,
        embeddings: list[DemoEmbedding] | None = None,
        mode: FeatureMode = DEFAULT_MODE,
        k: int = 18,
        velocity_epsilon: float = DEFAULT_VELOCITY_EPSILON,
        selection: str = SELECTION_DYNAMICS,
        pool: list[DynamicsFeature] | None = None,
    ) -> "Pipeline":
        """Precompute key actions and pool features once for many episodes.

        ``pool`` may be supplied directly (e.g. imported features from a
        heavyweight model); it is then reordered to match dataset demo ids.
        """
        if selection not in (SELECTION_DYNAMICS, SELECTION_RANDOM):
            raise XicmError(f"unknown selection strategy {selection!r}")
        keyactions = {d.id: extract_keyframes(d, velocity_epsilon) for d in dataset.demos}
        embeddings = embeddings if embeddings is not None else embed_dataset(dataset)
        if len(embeddings) != len(dataset.demos):
            raise XicmError(
                f"{len(embeddings)} embeddings for {len(dataset.demos)} demos"
            )
        by_id = {e.demo_id: e for e in embeddings}
        missing = [d.id for d in dataset.demos if d.id not in by_id]
        if missing:
            raise XicmError(f"embeddings missing for demos: {missing[:3]}...")
        embeddings = [by_id[d.id] for d in dataset.demos]
        if pool is None:
            pool = pool_features(embeddings, predictor, mode)
        else:
            pool_by_id = {p.demo_id: p for p in pool}
            absent = [d.id for d in dataset.demos if d.id not in pool_by_id]
            if absent:
                raise XicmError(f"imported features missing for demos: {absent[:3]}...")
            pool = [pool_by_id[d.id] for d in dataset.demos]
            mode = pool[0].mode
        return cls(
            dataset=dataset,
            keyactions=keyactions,
            embeddings=embeddings,
            predictor=predictor,
            gateway=gateway,
            mode=mode,
            k=k,
            selection=selection,
            pool=pool,
        )

    # -- conveniences

    @property
    def image_size(self) -> int:
        return int(self.dataset.sim_params.get("image_size", 48))

    @property
    def grid_resolution(self) -> int:
        return self.dataset.workspace.grid_resolution

    def with_selection(self, selection: str) -> "Pipeline":
        if selection not in (SELECTION_DYNAMICS, SELECTION_RANDOM):
            raise XicmError(f"unknown selection strategy {selection!r}")
        return replace(self, selection=selection)

    def with_k(self, k: int) -> "Pipeline":
        return replace(self, k=k)

    # -- selection

    def query_feature(self, language: str, obs: Observation) -> DynamicsFeature:
        return dynamics_feature(embed_query(obs, language), self.predictor, self.mode)

    def select(self, language: str, obs: Observation, selection_seed: int | None = None) -> SelectionResult:
        if self.k > len(self.pool):
            raise XicmError(f"k={self.k} exceeds pool size {len(self.pool)}")
        if self.selection == SELECTION_RANDOM:
            rng = np.random.default_rng(stable_seed(selection_seed or 0, "random-selection"))
            indices = sorted(int(i) for i in rng.choice(len(self.pool), size=self.k, replace=False))
            return SelectionResult(indices=tuple(indices), scores=(0.0,) * self.k)
        return select_top_k(self.query_feature(language, obs), self.pool, self.k)

    # -- prompting

    def block_for(self, demo: Demonstration, similarity: float) -> DemoBlock:
        ws = self.dataset.workspace
        keyseq = self.keyactions[demo.id]
        return DemoBlock(
            demo_id=demo.id,
            language=demo.language,
            objects=tuple(quantize_object(o, ws) for o in demo.objects),
            actions=tuple(quantize_pose(a, ws) for a in keyseq.actions),
            similarity=similarity,
        )

    def build_query_prompt(
        self,
        language: str,
        objects: tuple[ObjectRecord, ...],
        selection: SelectionResult,
    ) -> PromptBundle:
        ws = self.dataset.workspace
        blocks = [
            self.block_for(self.dataset.demos[i], score)
            for i, score in zip(selection.indices, selection.scores)
        ]
        query_objects = tuple(quantize_object(o, ws) for o in objects)
        return build_prompt(blocks, language, query_objects, ws.grid_resolution)

    # -- full query

    def predict(
        self,
        language: str,
        objects: tuple[ObjectRecord, ...],
        obs: Observation,
        selection_seed: int | None = None,
        context: EpisodeContext | None = None,
    ) -> EpisodePrediction:
        """Select, prompt, complete and parse for one query scene."""
        selection = self.select(language, obs, selection_seed)
        bundle = self.build_query_prompt(language, objects, selection)
        record = self.gateway.complete(bundle, context)
        prediction = parse_prediction(record.response_text, self.grid_resolution)
        return EpisodePrediction(
            bundle=bundle, record=record, prediction=prediction, selection=selection
        )
