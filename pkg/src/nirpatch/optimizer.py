"""Black-box attack loop: differential evolution over patch genomes.

The search flattens a genome into [centers..., radii...] and runs classic
DE/rand/1/bin: donor = a + factor * (b - c) over three distinct partners,
binomial crossover with one forced donor coordinate, and elitist selection
where the child replaces its parent only on a strict fitness improvement
(ties keep the parent, so the best fitness never regresses). Individual i
draws exclusively from RngStream(seed, i), which makes runs reproducible and
safe to evaluate in parallel.

Fitness is the quantity the attacker wants small: the true identity's
probability when dodging, or 1 minus the target's probability when
impersonating. Each generation checks the incumbent best against the success
predicate before evolving, reusing its cached score vector so the check
costs no oracle query. A probe that already fools the oracle short-circuits
to a successful result with stop_generation == -1 after the single clean
query. Total queries never exceed 1 + population * (max_iters + 1).
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DimensionMismatch,
    InvalidConfig,
    InvalidLabel,
    AttackAborted,
    PopulationTooSmall,
    ProtocolViolation,
    ScorerFailure,
    ScorerTimeout,
    ShapeMismatch,
)
from .geometry import GenomeBounds, PatchGenome, compose_mask
from .image import BinaryMask, NirImage
from .oracle import BuiltinScorer, Gallery, ScoreVector
from .reflectance import ReflectanceParams, render_adversarial
from .rng import RngStream

MODES = ("dodging", "impersonation")
OPTIMIZE_MODES = ("joint", "shape", "position")
INK_RENDER_MODES = ("lrm", "zero")


@dataclass(frozen=True)
class AttackConfig:
    """Everything an attack run needs besides the probe, mask, and oracle."""

    mode: str
    true_label: str
    target_label: str | None = None
    patches: int = 4
    vertices: int = 8
    bounds: GenomeBounds | None = None
    population: int = 40
    max_iters: int = 200
    mutation_factor: float = 0.5
    crossover_rate: float = 0.9
    seed: int = 0
    reflectance: ReflectanceParams = field(default_factory=ReflectanceParams)
    optimize: str = "joint"
    ink_render: str = "lrm"
    fixed_centers: tuple | None = None
    temperature: float = 0.05

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.optimize not in OPTIMIZE_MODES:
            raise InvalidConfig(
                f"optimize must be one of {OPTIMIZE_MODES}, got {self.optimize!r}"
            )
        if self.ink_render not in INK_RENDER_MODES:
            raise InvalidConfig(
                f"ink_render must be one of {INK_RENDER_MODES}, got {self.ink_render!r}"
            )
        if self.mode == "impersonation":
            if not self.target_label:
                raise InvalidConfig("impersonation requires target_label")
            if self.target_label == self.true_label:
                raise InvalidLabel("target_label must differ from true_label")
        if self.patches < 1:
            raise InvalidConfig(f"patches must be >= 1, got {self.patches}")
        if self.vertices < 3:
            raise InvalidConfig(f"vertices must be >= 3, got {self.vertices}")
        if self.population < 4:
            raise PopulationTooSmall(
                f"differential mutation needs population >= 4, got {self.population}"
            )
        if self.max_iters < 0:
            raise InvalidConfig(f"max_iters must be >= 0, got {self.max_iters}")
        if self.mutation_factor < 0:
            raise InvalidConfig(f"mutation_factor must be >= 0, got {self.mutation_factor}")
        if not 0.0 <= self.crossover_rate <= 1.0:
            raise InvalidConfig(
                f"crossover_rate must be in [0, 1], got {self.crossover_rate}"
            )
        if self.temperature <= 0:
            raise InvalidConfig(f"temperature must be > 0, got {self.temperature}")
        if self.optimize == "shape":
            centers = np.asarray(self.fixed_centers, dtype=np.float64) \
                if self.fixed_centers is not None else None
            if centers is None or centers.shape != (self.patches, 2):
                raise InvalidConfig(
                    "optimize='shape' requires fixed_centers of shape (patches, 2)"
                )
        if self.fixed_centers is not None:
            # normalize to nested tuples so configs stay hashable and comparable
            object.__setattr__(
                self,
                "fixed_centers",
                tuple(tuple(float(v) for v in row) for row in self.fixed_centers),
            )


@dataclass
class AttackResult:
    best_genome: PatchGenome | None
    fitness_trace: list
    success: bool
    stop_generation: int
    query_count: int
    final_scores: ScoreVector | None
    clean_scores: ScoreVector


@dataclass
class FitnessContext:
    """Fixed per-attack inputs threaded through every fitness evaluation."""

    probe: NirImage
    face_mask: BinaryMask
    oracle: object
    cfg: AttackConfig


# --- DE primitives on flat vectors ---------------------------------------------

def de_mutate(vectors, index: int, factor: float, rng: RngStream) -> np.ndarray:
    """Donor for one individual: a + factor * (b - c), partners drawn without
    replacement from the population excluding index."""
    if len(vectors) < 4:
        raise PopulationTooSmall(
            f"differential mutation needs >= 4 individuals, got {len(vectors)}"
        )
    a, b, c = rng.distinct_indices(len(vectors), 3, exclude=(index,))
    return vectors[a] + factor * (vectors[b] - vectors[c])


def de_crossover(target, donor, rate: float, rng: RngStream) -> np.ndarray:
    """Binomial crossover: donor coordinate where u < rate, plus one forced
    donor coordinate so the trial never equals the target by construction.
    Draw order is fixed: forced index first, then one uniform per coordinate."""
    target = np.asarray(target, dtype=np.float64)
    donor = np.asarray(donor, dtype=np.float64)
    if target.shape != donor.shape:
        raise ShapeMismatch(f"target {target.shape} vs donor {donor.shape}")
    d = target.shape[0]
    forced = rng.randint_below(d)
    take = np.array([rng.uniform(0.0, 1.0) < rate for _ in range(d)])
    take[forced] = True
    return np.where(take, donor, target)


def select(parent_fitness: float, child_fitness: float) -> bool:
    """True when the child replaces the parent; ties keep the parent."""
    return child_fitness < parent_fitness


# --- genome <-> search-vector codec ---------------------------------------------

class _Codec:
    """Maps the evolving flat vector onto full genomes for each optimize mode.

    joint     : vector = centers + radii
    position  : vector = centers; radii pinned to the mid-range value, so each
                patch is the fixed round shape and only placement evolves
    shape     : vector = radii; centers pinned to cfg.fixed_centers
    """

    def __init__(self, cfg: AttackConfig):
        if cfg.bounds is None:
            raise InvalidConfig("codec needs materialized bounds")
        self.cfg = cfg
        b = cfg.bounds
        m, n = cfg.patches, cfg.vertices
        center_lo = np.tile([b.x_min, b.y_min], m)
        center_hi = np.tile([b.x_max, b.y_max], m)
        radius_lo = np.full(m * n, b.radius_min)
        radius_hi = np.full(m * n, b.radius_max)
        self._mid_radius = (b.radius_min + b.radius_max) / 2.0
        if cfg.optimize == "joint":
            self.lower = np.concatenate([center_lo, radius_lo])
            self.upper = np.concatenate([center_hi, radius_hi])
        elif cfg.optimize == "position":
            self.lower, self.upper = center_lo, center_hi
        else:  # shape
            self.lower, self.upper = radius_lo, radius_hi
            centers = np.asarray(cfg.fixed_centers, dtype=np.float64)
            self._centers = np.clip(
                centers, [b.x_min, b.y_min], [b.x_max, b.y_max]
            )
        self.dim = self.lower.shape[0]

    def init(self, stream: RngStream) -> np.ndarray:
        return stream.uniform_array(self.lower, self.upper, self.dim)

    def clip(self, vec: np.ndarray) -> np.ndarray:
        return np.clip(vec, self.lower, self.upper)

    def decode(self, vec: np.ndarray) -> PatchGenome:
        m, n = self.cfg.patches, self.cfg.vertices
        if self.cfg.optimize == "joint":
            return PatchGenome.from_vector(m, n, vec)
        if self.cfg.optimize == "position":
            return PatchGenome(
                centers=vec.reshape(m, 2),
                radii=np.full((m, n), self._mid_radius),
            )
        return PatchGenome(centers=self._centers, radii=vec.reshape(m, n))


# --- fitness ---------------------------------------------------------------------

def _fitness_from_scores(scores: ScoreVector, cfg: AttackConfig) -> float:
    if cfg.mode == "dodging":
        return scores[cfg.true_label]
    return 1.0 - scores[cfg.target_label]


def attack_succeeds(scores: ScoreVector, cfg: AttackConfig) -> bool:
    """Dodging: top-1 is no longer the true identity. Impersonation: top-1
    is the target."""
    top = scores.top1()
    if cfg.mode == "dodging":
        return top != cfg.true_label
    return top == cfg.target_label


def _evaluate(genome: PatchGenome, ctx: FitnessContext):
    mask = compose_mask(genome, ctx.face_mask, ctx.probe.width, ctx.probe.height)
    adv = render_adversarial(ctx.probe, mask, ctx.cfg.reflectance, ctx.cfg.ink_render)
    scores = ctx.oracle.score(adv)
    return _fitness_from_scores(scores, ctx.cfg), scores


def fitness(genome: PatchGenome, ctx: FitnessContext) -> float:
    """Render the genome onto the probe, query the oracle, return the loss."""
    return _evaluate(genome, ctx)[0]


# --- population construction -------------------------------------------------------

def init_population(cfg: AttackConfig, rng: RngStream) -> list:
    """Population of cfg.population genomes, uniform in the feasible box;
    individual i draws from stream_id == i of rng's seed."""
    codec = _Codec(cfg)
    out = []
    for i in range(cfg.population):
        out.append(codec.decode(codec.init(rng.spawn(i))))
    return out


def mutate(population, index: int, factor: float, rng: RngStream) -> PatchGenome:
    """Genome-level donor construction over a population of like-shaped genomes."""
    if not 0 <= index < len(population):
        raise ShapeMismatch(f"index {index} out of range for population {len(population)}")
    m = population[index].patch_count
    n = population[index].vertex_count
    vectors = [g.to_vector() for g in population]
    return PatchGenome.from_vector(m, n, de_mutate(vectors, index, factor, rng))


def crossover(target: PatchGenome, donor: PatchGenome, rate: float, rng: RngStream) -> PatchGenome:
    if (target.patch_count, target.vertex_count) != (donor.patch_count, donor.vertex_count):
        raise ShapeMismatch("target and donor genome shapes differ")
    trial = de_crossover(target.to_vector(), donor.to_vector(), rate, rng)
    return PatchGenome.from_vector(target.patch_count, target.vertex_count, trial)


# --- attack loop -----------------------------------------------------------------

class _CountingScorer:
    """Per-attack query counter around any scorer."""

    def __init__(self, inner):
        self._inner = inner
        self.query_count = 0

    @property
    def labels(self):
        return self._inner.labels

    def score(self, probe):
        result = self._inner.score(probe)
        self.query_count += 1
        return result


def _as_scorer(gallery, cfg: AttackConfig):
    if isinstance(gallery, Gallery):
        return BuiltinScorer(gallery, cfg.temperature)
    if hasattr(gallery, "score") and hasattr(gallery, "labels"):
        return gallery
    raise InvalidConfig(f"cannot use {type(gallery).__name__} as an oracle")


class _TraceWriter:
    def __init__(self, path):
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._csv = csv.writer(self._fh)
        self._csv.writerow(
            ["generation", "best_fitness", "mean_fitness", "query_count", "success"]
        )

    def row(self, generation, best, mean, queries, success):
        self._csv.writerow([generation, f"{best:.12g}", f"{mean:.12g}", queries, int(success)])

    def close(self):
        self._fh.close()


def _evaluate_many(genomes, ctx: FitnessContext, workers: int):
    if workers <= 1:
        return [_evaluate(g, ctx) for g in genomes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda g: _evaluate(g, ctx), genomes))


def run_attack(
    probe: NirImage,
    face_mask: BinaryMask,
    gallery,
    cfg: AttackConfig,
    *,
    workers: int = 1,
    trace_path=None,
) -> AttackResult:
    """Run the full attack against a gallery or an already-connected scorer.

    Returns the best genome found, per-generation best-fitness trace, the
    success flag, the generation index the loop stopped at (-1 when the clean
    probe already fooled the oracle), and the total query count. Oracle
    failures raise AttackAborted carrying the partial result. Results are
    identical for any workers value; workers only parallelize oracle calls.
    """
    if (probe.width, probe.height) != (face_mask.width, face_mask.height):
        raise DimensionMismatch(
            f"probe {probe.width}x{probe.height} vs face mask "
            f"{face_mask.width}x{face_mask.height}"
        )
    scorer = _as_scorer(gallery, cfg)
    labels = scorer.labels
    if cfg.true_label not in labels:
        raise InvalidLabel(f"true_label {cfg.true_label!r} not in gallery {labels}")
    if cfg.mode == "impersonation" and cfg.target_label not in labels:
        raise InvalidLabel(f"target_label {cfg.target_label!r} not in gallery {labels}")

    counting = _CountingScorer(scorer)
    try:
        clean = counting.score(probe)
    except (ScorerFailure, ScorerTimeout, ProtocolViolation) as exc:
        partial = AttackResult(
            best_genome=None,
            fitness_trace=[],
            success=False,
            stop_generation=-1,
            query_count=counting.query_count,
            final_scores=None,
            clean_scores=None,
        )
        raise AttackAborted(f"oracle failed on clean probe: {exc}", partial) from exc
    if attack_succeeds(clean, cfg):
        return AttackResult(
            best_genome=None,
            fitness_trace=[],
            success=True,
            stop_generation=-1,
            query_count=counting.query_count,
            final_scores=clean,
            clean_scores=clean,
        )

    bounds = cfg.bounds or GenomeBounds.for_image(probe.width, probe.height)
    eff = replace(cfg, bounds=bounds)
    codec = _Codec(eff)
    master = RngStream(eff.seed)
    streams = [master.spawn(i) for i in range(eff.population)]
    ctx = FitnessContext(probe=probe, face_mask=face_mask, oracle=counting, cfg=eff)
    writer = _TraceWriter(trace_path) if trace_path else None

    trace: list[float] = []
    vecs = [codec.clip(codec.init(streams[i])) for i in range(eff.population)]
    fits: list[float] = []
    scores: list[ScoreVector] = []
    try:
        try:
            for f, s in _evaluate_many([codec.decode(v) for v in vecs], ctx, workers):
                fits.append(f)
                scores.append(s)

            generation = 0
            while True:
                best_idx = int(np.argmin(fits))
                trace.append(fits[best_idx])
                ok = attack_succeeds(scores[best_idx], eff)
                if writer:
                    writer.row(
                        generation,
                        fits[best_idx],
                        float(np.mean(fits)),
                        counting.query_count,
                        ok,
                    )
                if ok:
                    success = True
                    break
                if generation == eff.max_iters:
                    success = False
                    break

                trials = []
                for i in range(eff.population):
                    donor = de_mutate(vecs, i, eff.mutation_factor, streams[i])
                    trial = de_crossover(vecs[i], donor, eff.crossover_rate, streams[i])
                    trials.append(codec.clip(trial))
                child_evals = _evaluate_many(
                    [codec.decode(t) for t in trials], ctx, workers
                )
                for i, (cf, cs) in enumerate(child_evals):
                    if select(fits[i], cf):
                        vecs[i], fits[i], scores[i] = trials[i], cf, cs
                generation += 1
        except (ScorerFailure, ScorerTimeout, ProtocolViolation) as exc:
            partial_best = int(np.argmin(fits)) if fits else None
            partial = AttackResult(
                best_genome=codec.decode(vecs[partial_best]) if fits else None,
                fitness_trace=trace,
                success=False,
                stop_generation=len(trace) - 1,
                query_count=counting.query_count,
                final_scores=scores[partial_best] if fits else None,
                clean_scores=clean,
            )
            raise AttackAborted(f"oracle failed mid-attack: {exc}", partial) from exc
    finally:
        if writer:
            writer.close()

    best_idx = int(np.argmin(fits))
    return AttackResult(
        best_genome=codec.decode(vecs[best_idx]),
        fitness_trace=trace,
        success=success,
        stop_generation=generation,
        query_count=counting.query_count,
        final_scores=scores[best_idx],
        clean_scores=clean,
    )
