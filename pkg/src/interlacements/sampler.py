"""Monte Carlo sampling of interlacement trajectories that meet a finite window.

Under Q_K a trajectory enters K at X_0 ~ e_K / cap(K); forwards it is a
simple random walk and backwards a walk conditioned never to return to K.
The number of trajectories with label at most u is Poisson(u cap(K)).

Only visits to K matter for the occupation field, so the forward path is
followed through its trace on K. From x in K the walk steps to a uniform
neighbour y. If y is in K it stays there; otherwise it returns to K with
probability ``h(y) = sum_x' g(y, x') e_K(x')`` and does so at x' with
probability ``(g(y, K) G_K^{-1})(x')``, and escapes for good with probability
``1 - h(y)``. Both laws are exact consequences of the last-exit
decomposition, so every trajectory is a finite object without truncation
bias. Aggregated, the trace chain has transition matrix ``I - G_K^{-1}`` and
escape probabilities ``e_K``.

The bulk sampler works in fixed-size chunks of replicas, each with its own
``SeedSequence`` child keyed by the chunk index, so the output does not
depend on the number of worker processes.
"""

import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .potential_theory import SiteSet

WORKERS_ENV = "INTERLACEMENTS_WORKERS"
DEFAULT_CHUNK = 500
MAX_TRACE_STEPS = 100_000


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ValidationError(f"{WORKERS_ENV} must be a positive integer") from None


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    Parameters
    ----------
    seed : int
        Root seed (64-bit).
    replicas : int
        Number of independent configurations.
    mode : str
        ``"exact"`` (trace chain with exact return/escape decisions) or
        ``"truncation"`` (plain walk, escape declared once it is ``radius`` away
        from K; biased, kept for benchmarking).
    radius : int
        Truncation radius for ``mode="truncation"``.
    workers : int
        Worker processes for the bulk sampler; output does not depend on it.
    chunk : int
        Replicas per RNG chunk.
    backward_steps : int
        Length of the simulated backward path per trajectory.
    """

    seed: int = 0
    replicas: int = 1
    mode: str = "exact"
    radius: int = 16
    workers: int = field(default_factory=default_workers)
    chunk: int = DEFAULT_CHUNK
    backward_steps: int = 8

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.replicas < 1:
            raise ValidationError("replicas must be >= 1")
        if self.mode not in ("exact", "truncation"):
            raise ValidationError(f"unknown escape mode {self.mode!r}")
        if self.mode == "truncation" and self.radius < 1:
            raise ValidationError("truncation radius must be >= 1")
        if self.workers < 1 or self.chunk < 1 or self.backward_steps < 0:
            raise ValidationError("workers, chunk must be >= 1 and backward_steps >= 0")


def stream(seed, *key):
    """Generator for the stream ``key`` under ``seed``; independent of scheduling."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


# ---------------------------------------------------------------- trace chain


class TraceChain:
    """Exact return/escape bookkeeping for walks started in K.

    Attributes
    ----------
    neighbour_index : (n, 2d) int array
        Position in K of each neighbour, or -1 when the neighbour is outside.
    outside : (m, d) int array
        The distinct outside neighbours of K.
    outside_of : (n, 2d) int array
        Row of ``outside`` for each outside neighbour (-1 for neighbours in K).
    h : (m,) array
        Return probabilities P_y[H_K < inf] for the outside neighbours.
    entrance : (m, n) array
        Sub-probability of entering K at each site, rows summing to ``h``.
    transition, escape : arrays
        Aggregated one-visit-to-the-next law on K and the escape probability.
    """

    def __init__(self, K):
        model = K.model
        if getattr(model, "kind", None) != "free-lattice":
            raise ValidationError("the interlacement sampler runs on Z^d lattices")
        self.K = K
        self.d = model.d
        n = len(K)
        sites = np.array(K.sites, dtype=np.int64)
        self.sites = sites
        pos = {s: i for i, s in enumerate(K.sites)}
        nbrs = np.array([model.neighbours(x) for x in sites])  # (n, 2d, d)
        self.neighbour_index = np.array(
            [[pos.get(tuple(int(c) for c in y), -1) for y in row] for row in nbrs]
        )
        out_list, out_pos = [], {}
        self.outside_of = np.full(self.neighbour_index.shape, -1)
        for i in range(n):
            for k in range(2 * self.d):
                if self.neighbour_index[i, k] < 0:
                    y = tuple(int(c) for c in nbrs[i, k])
                    if y not in out_pos:
                        out_pos[y] = len(out_list)
                        out_list.append(y)
                    self.outside_of[i, k] = out_pos[y]
        self.outside = np.array(out_list, dtype=np.int64).reshape(-1, self.d)
        gyk = model.matrix(self.outside, sites) if len(out_list) else np.zeros((0, n))
        entrance = K.solve(gyk.T).T
        if (entrance < -1e-12).any():
            raise NumericalError(f"negative entrance probability {entrance.min():.3e}")
        self.entrance = np.clip(entrance, 0.0, None)
        self.h = self.entrance.sum(axis=1)
        if (self.h > 1 + 1e-12).any():
            raise NumericalError("return probability above 1")
        self.h = np.minimum(self.h, 1.0)

        P = np.zeros((n, n))
        esc = np.zeros(n)
        for i in range(n):
            for k in range(2 * self.d):
                j = self.neighbour_index[i, k]
                if j >= 0:
                    P[i, j] += 1.0
                else:
                    o = self.outside_of[i, k]
                    P[i] += self.entrance[o]
                    esc[i] += 1.0 - self.h[o]
        self.transition = P / (2 * self.d)
        self.escape = esc / (2 * self.d)
        self.start = K.e / K.cap
        # cumulative rows with escape as the last state, for vectorised draws
        cum = np.cumsum(np.column_stack([self.transition, self.escape]), axis=1)
        cum[:, -1] = 1.0
        self.cumulative = cum

    def no_return(self, points):
        """P_y[H_K = inf] at arbitrary lattice points (0 on K)."""
        points = np.atleast_2d(points)
        hb = 1.0 - self.K.model.matrix(points, self.sites) @ self.K.e
        inK = np.array([tuple(int(c) for c in p) in set(self.K.sites) for p in points])
        hb[inK] = 0.0
        return np.clip(hb, 0.0, 1.0)


# ---------------------------------------------------------------- trajectories


@dataclass
class Trajectory:
    """One trajectory of the interlacement that meets K.

    ``forward`` lists the positions in ``K.sites`` of the sites visited from
    time 0 on, in order (the trace of the forward path on K), and ``holding`` the exponential holding
    time of each of those visits. ``exits`` records, for each step taken from
    ``forward[k]``, the neighbour entered if it lies outside K (``None`` when
    the step stays in K); the last exit is where the walk escapes.
    ``backward`` holds X_{-1}, X_{-2}, ... for ``backward_steps`` steps.
    """

    label: float
    forward: np.ndarray
    holding: np.ndarray
    exits: list
    backward: np.ndarray
    escaped: bool = True

    @property
    def start(self):
        return self.forward[0]


def _backward_path(chain, x0, steps, rng):
    """Walk conditioned never to return to K, started from x0 in K."""
    model = chain.K.model
    path = np.empty((steps, chain.d), dtype=np.int64)
    cur = np.asarray(x0)
    Kset = set(chain.K.sites)
    e0 = chain.K.e[chain.K.index(cur)]
    for s in range(steps):
        nb = model.neighbours(cur)
        hb = chain.no_return(nb)
        if s == 0:
            total = hb.sum() / len(nb)
            if abs(total - e0) > 1e-9 * max(1.0, e0):
                raise NumericalError(f"first backward step does not normalise: {total} vs e_K = {e0}")
        if hb.sum() <= 0:
            raise NumericalError("backward walk has no admissible step")
        cur = nb[rng.choice(len(nb), p=hb / hb.sum())]
        if tuple(int(c) for c in cur) in Kset:
            raise NumericalError("backward path re-entered K")
        path[s] = cur
    return path


def _forward_exact(chain, i0, rng):
    visits, exits = [i0], []
    i = i0
    for _ in range(MAX_TRACE_STEPS):
        k = rng.integers(2 * chain.d)
        j = chain.neighbour_index[i, k]
        if j >= 0:
            exits.append(None)
            visits.append(j)
            i = j
            continue
        o = chain.outside_of[i, k]
        y = tuple(int(c) for c in chain.outside[o])
        exits.append(y)
        if rng.random() >= chain.h[o]:
            return np.array(visits), exits, True
        i = int(rng.choice(len(chain.K), p=chain.entrance[o] / chain.h[o]))
        visits.append(i)
    raise NumericalError("trace chain did not escape within the step budget")


def _forward_truncated(chain, i0, radius, rng):
    """Plain walk until it is ``radius`` (sup-norm) away from every site of K."""
    pos = {s: i for i, s in enumerate(chain.K.sites)}
    cur = chain.sites[i0].copy()
    visits, exits = [i0], []
    outside = None
    eye = np.vstack([np.eye(chain.d, dtype=np.int64), -np.eye(chain.d, dtype=np.int64)])
    while True:
        cur = cur + eye[rng.integers(2 * chain.d)]
        key = tuple(int(c) for c in cur)
        if key in pos:
            exits.append(outside)
            outside = None
            visits.append(pos[key])
            continue
        if outside is None:
            outside = key
        if np.abs(chain.sites - cur).max(axis=1).min() > radius:
            exits.append(outside)
            return np.array(visits), exits, True


def sample_interlacement(model, K, u, cfg, replica=0, chain=None):
    """Trajectories of one configuration that meet K, with labels in [0, u].

    Parameters
    ----------
    model : LatticeGreen
    K : SiteSet or sequence of sites
    u : float
        Level.
    cfg : SamplerConfig
    replica : int
        Replica index; selects the RNG stream together with ``cfg.seed``.
    """
    if u < 0:
        raise ValidationError("level u must be nonnegative")
    if not isinstance(K, SiteSet):
        K = SiteSet(model, K)
    if K.cap <= 0:
        raise NumericalError("capacity must be positive")
    chain = chain or TraceChain(K)
    rng = stream(cfg.seed, 1, replica)
    count = rng.poisson(u * K.cap)
    labels = rng.uniform(0.0, u, size=count) if count else np.zeros(0)
    starts = rng.choice(len(K), size=count, p=chain.start)
    out = []
    for label, i0 in zip(labels, starts):
        if cfg.mode == "exact":
            visits, exits, escaped = _forward_exact(chain, int(i0), rng)
        else:
            visits, exits, escaped = _forward_truncated(chain, int(i0), cfg.radius, rng)
        holding = rng.exponential(size=len(visits))
        back = _backward_path(chain, K.sites[i0], cfg.backward_steps, rng)
        out.append(Trajectory(float(label), visits, holding, exits, back, escaped))
    return out


@dataclass
class OccupationField:
    """Occupation times ``L`` and visit counts ``ell`` on a window at level ``u``."""

    sites: list
    L: np.ndarray
    ell: np.ndarray
    u: float
    seed: int = None

    def as_dict(self):
        return {tuple(s): (float(a), int(b)) for s, a, b in zip(self.sites, self.L, self.ell)}


def occupation_field(trajectories, K, window=None, u=None, seed=None):
    """Sum the holding times of trajectories with label <= u at each window site."""
    window = list(K.sites) if window is None else [tuple(int(c) for c in w) for w in window]
    idx = []
    for w in window:
        if w not in K.sites:
            raise ValidationError(f"window site {w} is not in K")
        idx.append(K.sites.index(w))
    n = len(K)
    L = np.zeros(n)
    ell = np.zeros(n, dtype=np.int64)
    for tr in trajectories:
        if u is not None and tr.label > u:
            continue
        np.add.at(L, tr.forward, tr.holding)
        np.add.at(ell, tr.forward, 1)
    return OccupationField(window, L[idx], ell[idx], u, seed)


# ---------------------------------------------------------------- bulk fields


@dataclass
class FieldSample:
    """Fields of many replicas at several coupled levels.

    ``L[k, r, j]`` and ``ell[k, r, j]`` are the occupation time and the visit
    count at window site j, replica r, level ``levels[k]``; the levels share one
    set of labelled trajectories.
    """

    sites: list
    levels: np.ndarray
    L: np.ndarray
    ell: np.ndarray
    seed: int

    def at(self, u):
        k = int(np.flatnonzero(np.isclose(self.levels, u))[0])
        return self.L[k], self.ell[k]


def _chunk_fields(chain_data, levels, start, stop, seed, chunk_index):
    cumulative, start_p, cap = chain_data
    rng = stream(seed, 0, chunk_index)
    n = cumulative.shape[0]
    reps = stop - start
    u_max = levels[-1]
    counts = rng.poisson(u_max * cap, size=reps)
    total = int(counts.sum())
    owner = np.repeat(np.arange(reps), counts)
    labels = rng.uniform(0.0, u_max, size=total)
    state = rng.choice(n, size=total, p=start_p)
    visits = np.zeros(total * n, dtype=np.int64)
    alive = np.arange(total)
    for _ in range(MAX_TRACE_STEPS):
        if alive.size == 0:
            break
        visits[alive * n + state] += 1  # one entry per live trajectory, no repeats
        r = rng.random(alive.size)
        nxt = (r[:, None] >= cumulative[state]).sum(axis=1)
        keep = nxt < n
        alive, state = alive[keep], nxt[keep]
    else:
        raise NumericalError("trace chain did not escape within the step budget")
    visits = visits.reshape(total, n)
    hold = np.zeros(visits.shape)
    pos = visits > 0
    hold[pos] = rng.standard_gamma(visits[pos])
    L = np.zeros((len(levels), reps, n))
    ell = np.zeros((len(levels), reps, n), dtype=np.int64)
    for k, u in enumerate(levels):
        m = labels <= u
        for j in range(n):
            L[k, :, j] = np.bincount(owner[m], weights=hold[m, j], minlength=reps)
            ell[k, :, j] = np.bincount(owner[m], weights=visits[m, j], minlength=reps).round()
    return L, ell


def sample_fields(K, levels, cfg, window=None):
    """Occupation fields of ``cfg.replicas`` independent configurations.

    Parameters
    ----------
    K : SiteSet
    levels : float or sequence of float
        Levels at which the fields are reported (coupled through the labels).
    cfg : SamplerConfig
        Only ``mode="exact"`` is vectorised; truncation runs trajectory by trajectory.
    window : sequence, optional
        Subset of K to report; defaults to K.
    """
    levels = np.sort(np.atleast_1d(np.asarray(levels, dtype=float)))
    if (levels < 0).any():
        raise ValidationError("levels must be nonnegative")
    window = list(K.sites) if window is None else [tuple(int(c) for c in w) for w in window]
    for w in window:
        if w not in K.sites:
            raise ValidationError(f"window site {w} is not in K")
    idx = [K.sites.index(w) for w in window]
    n = len(K)
    if levels[-1] == 0:
        z = np.zeros((len(levels), cfg.replicas, len(idx)))
        return FieldSample(window, levels, z, z.astype(np.int64), cfg.seed)
    if cfg.mode == "truncation":
        L = np.zeros((len(levels), cfg.replicas, n))
        ell = np.zeros((len(levels), cfg.replicas, n), dtype=np.int64)
        chain = TraceChain(K)
        for r in range(cfg.replicas):
            trs = sample_interlacement(K.model, K, levels[-1], cfg, replica=r, chain=chain)
            for k, u in enumerate(levels):
                f = occupation_field(trs, K, u=u)
                L[k, r], ell[k, r] = f.L, f.ell
        return FieldSample(window, levels, L[:, :, idx], ell[:, :, idx], cfg.seed)

    chain = TraceChain(K)
    data = (chain.cumulative, chain.start, K.cap)
    bounds = [(s, min(s + cfg.chunk, cfg.replicas)) for s in range(0, cfg.replicas, cfg.chunk)]
    args = [(data, levels, a, b, cfg.seed, c) for c, (a, b) in enumerate(bounds)]
    if cfg.workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(_chunk_fields_star, args))
    else:
        parts = [_chunk_fields(*a) for a in args]
    L = np.concatenate([p[0] for p in parts], axis=1)[:, :, idx]
    ell = np.concatenate([p[1] for p in parts], axis=1)[:, :, idx]
    return FieldSample(window, levels, L, ell, cfg.seed)


def _chunk_fields_star(a):
    return _chunk_fields(*a)


# ---------------------------------------------------------------- escape frequencies


def escape_frequencies(K, walks, seed, radius=4):
    """Fraction of walks from each x in K that never return to K.

    Each walk takes plain random-walk steps until it either comes back to K
    or gets ``radius`` (sup-norm) away from every site of K; at that point the
    return decision is the Bernoulli with probability ``P_y[H_K < inf]``.
    Returns ``(frequencies, standard_errors)``.
    """
    chain = TraceChain(K)
    d = chain.d
    eye = np.vstack([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
    pos = {s: i for i, s in enumerate(K.sites)}
    freq = np.empty(len(K))
    for i, x in enumerate(chain.sites):
        rng = stream(seed, 2, i)
        cur = np.tile(x, (walks, 1))
        escaped = np.zeros(walks, dtype=bool)
        alive = np.arange(walks)
        while alive.size:
            cur[alive] += eye[rng.integers(2 * d, size=alive.size)]
            keys = [tuple(int(c) for c in p) for p in cur[alive]]
            back = np.array([k in pos for k in keys])
            far = np.abs(cur[alive][:, None, :] - chain.sites[None]).max(axis=2).min(axis=1) > radius
            decide = far & ~back
            if decide.any():
                hb = chain.no_return(cur[alive[decide]])
                escaped[alive[decide]] = rng.random(decide.sum()) < hb
            alive = alive[~(back | decide)]
        freq[i] = escaped.mean()
    se = np.sqrt(freq * (1 - freq) / walks)
    return freq, se


# ---------------------------------------------------------------- reference samplers


def sample_besq0(a2, tau, seed, size=None):
    """Draws of BESQ^0(a2, tau): a Poisson(a2 / (2 tau)) sum of exponentials with mean 2 tau."""
    if a2 < 0 or tau <= 0:
        raise ValidationError("need a2 >= 0 and tau > 0")
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, 3)
    n = rng.poisson(a2 / (2.0 * tau), size=size)
    return rng.standard_gamma(n) * (2.0 * tau) if size is not None else float(
        rng.standard_gamma(n) * 2.0 * tau
    )


def _factor(C, what):
    scale = max(1.0, float(np.abs(np.diag(C)).max())) if C.size else 1.0
    w, Q = np.linalg.eigh(C)
    if w.size and w.min() < -1e-10 * scale:
        raise NumericalError(f"{what} covariance is not positive semidefinite (min eigenvalue {w.min():.3e})")
    return Q * np.sqrt(np.clip(w, 0.0, None))[None, :]


def _gaussian(C, seed, size, what, tag):
    rng = seed if isinstance(seed, np.random.Generator) else stream(seed, tag)
    A = _factor(C, what)
    z = rng.standard_normal((1 if size is None else size, C.shape[0]))
    out = z @ A.T
    return out[0] if size is None else out


def pinned_gff_covariance(points, kernel=None):
    from .lattice_green import potential_kernel_model

    a = kernel or potential_kernel_model()
    P = np.atleast_2d(np.asarray(points, dtype=np.int64))
    av = a.values(P)
    return 3.0 * (av[:, None] + av[None, :] - a.matrix(P))


def sample_pinned_gff_2d(points, seed, size=None, kernel=None):
    """Planar field pinned at 0 with covariance ``3 (a(y) + a(y') - a(y' - y))``."""
    return _gaussian(pinned_gff_covariance(points, kernel), seed, size, "pinned field", 4)


def free_field_increment_covariance(model, points):
    P = np.atleast_2d(np.asarray(points, dtype=np.int64))
    gv = model.values(P)
    return model.matrix(P) + model.g0 - gv[:, None] - gv[None, :]


def sample_free_field_increments(model, points, seed, size=None):
    """Draws of (phi_x) with covariance ``g(x'-x) + g(0) - g(x) - g(x')``."""
    if model.d < 3:
        raise ValidationError("the free field needs d >= 3")
    return _gaussian(free_field_increment_covariance(model, points), seed, size, "increment", 5)


def sample_free_field(model, points, seed, size=None):
    """Draws of the free field (gamma_x) with covariance g(x' - x)."""
    return _gaussian(model.matrix(points), seed, size, "free field", 6)


# ---------------------------------------------------------------- binary records

BINARY_MAGIC = b"RIOF"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sIIIQdQ")


def write_binary(path, sample, level=None):
    """Write fields at one level in the fixed little-endian record layout.

    Layout::

        header  : magic "RIOF" (4 bytes), version u32, n_sites u32, d u32,
                  n_records u64, level f64, seed u64              (40 bytes)
        sites   : n_sites * d int64
        records : n_records * (replica u64, L f64[n_sites], ell u64[n_sites])
    """
    u = float(sample.levels[-1] if level is None else level)
    L, ell = sample.at(u)
    sites = np.asarray(sample.sites, dtype="<i8")
    n, d = sites.shape
    rec = np.dtype([("replica", "<u8"), ("L", "<f8", (n,)), ("ell", "<u8", (n,))])
    arr = np.zeros(L.shape[0], dtype=rec)
    arr["replica"] = np.arange(L.shape[0])
    arr["L"] = L
    arr["ell"] = ell
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, n, d, L.shape[0], u, int(sample.seed)))
        fh.write(sites.tobytes())
        fh.write(arr.tobytes())


def read_binary(path):
    """Inverse of :func:`write_binary`; returns (sites, level, seed, records)."""
    with open(path, "rb") as fh:
        magic, version, n, d, count, u, seed = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != BINARY_MAGIC or version != BINARY_VERSION:
            raise ValidationError("not an occupation-field record file")
        sites = np.frombuffer(fh.read(8 * n * d), dtype="<i8").reshape(n, d)
        rec = np.dtype([("replica", "<u8"), ("L", "<f8", (n,)), ("ell", "<u8", (n,))])
        arr = np.frombuffer(fh.read(rec.itemsize * count), dtype=rec)
    return sites, u, seed, arr
