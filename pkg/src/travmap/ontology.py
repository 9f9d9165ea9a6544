"""Semantic-class -> traversability-cost mapping.

Cost classes: 0 free, 1 low-cost, 2 medium-cost, 3 lethal, 4 unknown/ignored.
The mapping is a text config of `semantic_id = cost_id` lines; `#` starts a
comment. A default file for the synthetic scenes ships with the package.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from . import UNKNOWN

COST_IDS = (0, 1, 2, 3, 4)


class Ontology:
    def __init__(self, mapping: dict[int, int]):
        for sem, cost in mapping.items():
            if cost not in COST_IDS:
                raise ValueError(f"semantic id {sem} maps to invalid cost id {cost}")
        self.mapping = dict(mapping)
        # dense lookup table for vectorized mapping; -1 marks absent ids
        max_id = max(mapping) if mapping else 0
        self._table = np.full(max_id + 1, -1, dtype=np.int64)
        for sem, cost in mapping.items():
            self._table[sem] = cost

    def __len__(self):
        return len(self.mapping)

    def __contains__(self, semantic_id: int):
        return semantic_id in self.mapping

    def map_semantics(self, semantic_ids: np.ndarray) -> np.ndarray:
        """Elementwise semantic -> cost lookup; unknown ids raise, never drop."""
        ids = np.asarray(semantic_ids, dtype=np.int64)
        if ids.size == 0:
            return np.zeros(ids.shape, dtype=np.int64)
        bad = (ids < 0) | (ids >= len(self._table))
        costs = self._table[np.where(bad, 0, ids)]
        bad |= costs < 0
        if bad.any():
            missing = sorted(set(ids[bad].tolist()))
            raise KeyError(f"semantic ids not in ontology: {missing}")
        return costs

    @classmethod
    def load(cls, path) -> "Ontology":
        mapping = {}
        with open(path) as f:
            for line_no, line in enumerate(f, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}: line {line_no}: expected 'semantic_id = cost_id'")
                left, right = line.split("=", 1)
                mapping[int(left.strip())] = int(right.strip())
        return cls(mapping)

    def save(self, path):
        with open(path, "w") as f:
            for sem in sorted(self.mapping):
                f.write(f"{sem} = {self.mapping[sem]}\n")

    @classmethod
    def default(cls) -> "Ontology":
        """Ontology for the synthetic scene semantic ids."""
        with resources.as_file(resources.files("travmap.data") / "default.ontology") as p:
            return cls.load(p)


def map_semantics(semantic_ids: np.ndarray, ontology: Ontology) -> np.ndarray:
    return ontology.map_semantics(semantic_ids)


UNKNOWN_COST = UNKNOWN
