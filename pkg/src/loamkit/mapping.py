"""Bounded-memory robot-centered map with a window-slide policy.

One ``MapStore`` interface, two backends:

* ``IkdMapStore`` keeps points in an incremental kd-tree; a slide lazily
  deletes everything outside the new window and lets the rebuild criterion
  compact storage.
* ``MtoOctreeMapStore`` keeps two octree structures; a slide snapshots the
  alive points and hands a background worker a rebuild job (box-filtered
  around the new window); the finished structure is swapped in atomically
  while inserts made during the rebuild are journaled and replayed first.

Both backends store normals alongside points and break distance ties by
insertion id, so identical operation sequences produce identical neighbor
sets.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import PointCloud
from .index import IncrementalKdTree

DEFAULT_HALF_EXTENT = 25.0
DEFAULT_OCTREE_LEAF = 0.01
OCTREE_BUCKET = 32
UNBOUNDED_ROOT_HALF = 8192.0


@dataclass
class MapWindow:
    """Axis-aligned cube; ``half_extent`` may be inf for an unbounded map."""

    center: np.ndarray
    half_extent: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.half_extent = float(self.half_extent)
        if not self.half_extent > 0:
            raise ValueError("half_extent must be > 0")

    @property
    def bounded(self) -> bool:
        return np.isfinite(self.half_extent)

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.half_extent

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.half_extent

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Closed-cube membership mask."""
        if not self.bounded:
            return np.ones(len(points), dtype=bool)
        return np.all(np.abs(points - self.center) <= self.half_extent, axis=1)


@dataclass(frozen=True)
class MapMemoryStats:
    alive: int
    allocated: int
    bytes_estimate: int


class OctreeIndex:
    """Octree over points with normal payloads; leaf buckets in linked chains.

    Cells split while they hold more than the bucket cap and their children
    would still have sides >= ``leaf_size``. Per-node exact content bounds
    drive kNN pruning. Structures are built/filled by one thread and may be
    read by others only once ``finalized``.
    """

    def __init__(self, center, root_half: float, leaf_size: float,
                 bucket_cap: int = OCTREE_BUCKET, struct_seq: int = 0):
        self.leaf_size = float(leaf_size)
        self.bucket_cap = int(bucket_cap)
        self.struct_seq = int(struct_seq)
        self.finalized = False
        self.n_points = 0
        self._ncap = 256
        self._pcap = 1024
        self._nused = 1
        self._pused = 0
        self._child = np.full((self._ncap, 8), -1, dtype=np.int32)
        self._ccen = np.zeros((self._ncap, 3))
        self._half = np.zeros(self._ncap)
        self._bbmin = np.zeros((self._ncap, 3))
        self._bbmax = np.zeros((self._ncap, 3))
        self._leaf_head = np.full(self._ncap, -1, dtype=np.int32)
        self._lcount = np.zeros(self._ncap, dtype=np.int32)
        self._ppts = np.zeros((self._pcap, 3))
        self._pnrm = np.zeros((self._pcap, 3))
        self._pseq = np.zeros(self._pcap, dtype=np.int64)
        self._pnext = np.full(self._pcap, -1, dtype=np.int32)
        self._ccen[0] = np.asarray(center, dtype=np.float64).reshape(3)
        self._half[0] = float(root_half)
        self._bbmin[0] = np.inf
        self._bbmax[0] = -np.inf

    # -- storage -----------------------------------------------------------

    def _grow_nodes(self, need: int):
        cap = self._ncap
        new_cap = max(cap * 2, cap + need)

        def grown(arr, fill):
            out = np.full((new_cap,) + arr.shape[1:], fill, dtype=arr.dtype)
            out[:cap] = arr
            return out

        self._child = grown(self._child, -1)
        self._ccen = grown(self._ccen, 0.0)
        self._half = grown(self._half, 0.0)
        self._bbmin = grown(self._bbmin, 0.0)
        self._bbmax = grown(self._bbmax, 0.0)
        self._leaf_head = grown(self._leaf_head, -1)
        self._lcount = grown(self._lcount, 0)
        self._ncap = new_cap

    def _grow_points(self, need: int):
        cap = self._pcap
        new_cap = max(cap * 2, cap + need)

        def grown(arr, fill):
            out = np.full((new_cap,) + arr.shape[1:], fill, dtype=arr.dtype)
            out[:cap] = arr
            return out

        self._ppts = grown(self._ppts, 0.0)
        self._pnrm = grown(self._pnrm, 0.0)
        self._pseq = grown(self._pseq, 0)
        self._pnext = grown(self._pnext, -1)
        self._pcap = new_cap

    def _alloc_node(self, center, half) -> int:
        if self._nused == self._ncap:
            self._grow_nodes(1)
        node = self._nused
        self._nused += 1
        self._ccen[node] = center
        self._half[node] = half
        self._bbmin[node] = np.inf
        self._bbmax[node] = -np.inf
        return node

    def _store_points(self, pts, nrm, seqs) -> np.ndarray:
        n = len(pts)
        if self._pused + n > self._pcap:
            self._grow_points(self._pused + n - self._pcap)
        slots = np.arange(self._pused, self._pused + n, dtype=np.int32)
        self._pused += n
        self._ppts[slots] = pts
        self._pnrm[slots] = nrm
        self._pseq[slots] = seqs
        return slots

    # -- insertion ---------------------------------------------------------

    def insert(self, pts, nrm, seqs):
        """Insert points with payloads; caller guarantees they lie in the
        root cell."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            return
        nrm = np.asarray(nrm, dtype=np.float64).reshape(-1, 3)
        seqs = np.asarray(seqs, dtype=np.int64).reshape(-1)
        slots = self._store_points(pts, nrm, seqs)
        self.n_points += len(pts)
        self._insert_rec(0, pts, slots, np.arange(len(pts), dtype=np.int64))

    def _octant(self, pts_rows, node) -> np.ndarray:
        c = self._ccen[node]
        return ((pts_rows[:, 0] >= c[0]).astype(np.int64)
                | ((pts_rows[:, 1] >= c[1]).astype(np.int64) << 1)
                | ((pts_rows[:, 2] >= c[2]).astype(np.int64) << 2))

    def _child_cell(self, node: int, octant: int):
        q = 0.5 * self._half[node]
        off = np.array([q if octant & 1 else -q,
                        q if octant & 2 else -q,
                        q if octant & 4 else -q])
        return self._ccen[node] + off, q

    def _is_leaf(self, node: int) -> bool:
        return bool((self._child[node] < 0).all())

    def _split(self, node: int):
        """Push this leaf's chain one level down."""
        slots = []
        p = int(self._leaf_head[node])
        while p >= 0:
            slots.append(p)
            p = int(self._pnext[p])
        slots = np.asarray(slots, dtype=np.int64)
        self._leaf_head[node] = -1
        self._lcount[node] = 0
        rows = self._ppts[slots]
        octs = self._octant(rows, node)
        for o in range(8):
            sel = slots[octs == o]
            if not len(sel):
                continue
            center, half = self._child_cell(node, o)
            ch = self._alloc_node(center, half)
            self._child[node, o] = ch
            self._bbmin[ch] = rows[octs == o].min(axis=0)
            self._bbmax[ch] = rows[octs == o].max(axis=0)
            # relink chain under the child
            head = -1
            for s in sel[::-1]:
                self._pnext[s] = head
                head = int(s)
            self._leaf_head[ch] = head
            self._lcount[ch] = len(sel)

    def _insert_rec(self, node: int, pts, slots, ids):
        sub = pts[ids]
        np.minimum(self._bbmin[node], sub.min(axis=0), out=self._bbmin[node])
        np.maximum(self._bbmax[node], sub.max(axis=0), out=self._bbmax[node])
        if self._is_leaf(node):
            incoming = len(ids)
            if (self._lcount[node] + incoming <= self.bucket_cap
                    or self._half[node] < self.leaf_size):
                head = int(self._leaf_head[node])
                for i in ids[::-1]:
                    s = int(slots[i])
                    self._pnext[s] = head
                    head = s
                self._leaf_head[node] = head
                self._lcount[node] += incoming
                return
            self._split(node)
        octs = self._octant(sub, node)
        for o in range(8):
            sel = ids[octs == o]
            if not len(sel):
                continue
            ch = int(self._child[node, o])
            if ch < 0:
                center, half = self._child_cell(node, o)
                ch = self._alloc_node(center, half)
                self._child[node, o] = ch
            self._insert_rec(ch, pts, slots, sel)

    # -- queries -----------------------------------------------------------

    def knn_batch(self, queries, k: int, max_d2: float = np.inf):
        q = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
        out_pid = np.empty((len(q), k), dtype=np.int32)
        out_d2 = np.empty((len(q), k), dtype=np.float64)
        root = 0 if self.n_points else -1
        counts = kernels.oct_knn(self._child, self._bbmin, self._bbmax,
                                 self._leaf_head, self._ppts, self._pseq,
                                 self._pnext, root, q, k, float(max_d2),
                                 out_pid, out_d2)
        return out_pid, out_d2, counts

    def collect_all(self):
        """(points, normals, seqs) of everything stored."""
        out_pid = np.empty(max(self.n_points, 1), dtype=np.int32)
        root = 0 if self.n_points else -1
        cnt = kernels.oct_collect(self._child, self._leaf_head, self._pnext,
                                  root, out_pid)
        s = out_pid[:cnt]
        s = s[np.argsort(self._pseq[s], kind="stable")]
        return self._ppts[s].copy(), self._pnrm[s].copy(), self._pseq[s].copy()

    def points_at(self, pids):
        return self._ppts[pids]

    def normals_at(self, pids):
        return self._pnrm[pids]

    def seq_at(self, pids):
        return self._pseq[pids]

    @property
    def bytes_estimate(self) -> int:
        return sum(a.nbytes for a in (self._child, self._ccen, self._half,
                                      self._bbmin, self._bbmax, self._leaf_head,
                                      self._lcount, self._ppts, self._pnrm,
                                      self._pseq, self._pnext))


class MapStore:
    """Shared surface of the sliding-map backends."""

    def __init__(self, window: MapWindow, slide_margin: float):
        self._window = window
        self._margin = float(slide_margin)
        self._next_seq = 0
        self.slide_count = 0
        self.last_slide_compacted = False

    @property
    def window(self) -> MapWindow:
        return self._window

    def _take_seqs(self, n: int) -> np.ndarray:
        s = np.arange(self._next_seq, self._next_seq + n, dtype=np.int64)
        self._next_seq += n
        return s

    def _needs_slide(self, position: np.ndarray) -> bool:
        if not self._window.bounded:
            return False
        gap = self._window.half_extent - np.abs(position - self._window.center).max()
        return gap <= self._margin

    def _prepare_scan(self, cloud_world: PointCloud):
        if cloud_world.normals is None:
            raise ValueError("map insertion requires a cloud with normals")
        mask = self._window.contains(cloud_world.points)
        return cloud_world.points[mask], cloud_world.normals[mask]

    # interface stubs
    def insert_scan(self, cloud_world: PointCloud) -> int:
        raise NotImplementedError

    def slide_window(self, robot_position) -> bool:
        raise NotImplementedError

    def query_neighbors(self, query, k: int):
        raise NotImplementedError

    def match(self, points, max_d2: float):
        """Solver hook: nearest alive neighbor per row within sqrt(max_d2).

        Returns (points, normals, d2, valid mask); rows with no neighbor in
        range have valid=False.
        """
        raise NotImplementedError

    def memory_stats(self) -> MapMemoryStats:
        raise NotImplementedError

    def __len__(self) -> int:
        return self.memory_stats().alive

    def close(self):
        pass


class IkdMapStore(MapStore):
    """Incremental-kd-tree backend; slides delete lazily, rebuilds compact."""

    backend_name = "ikd"

    def __init__(self, window: MapWindow, slide_margin: float):
        super().__init__(window, slide_margin)
        self._tree = IncrementalKdTree(data_dim=3)

    def insert_scan(self, cloud_world: PointCloud) -> int:
        pts, nrm = self._prepare_scan(cloud_world)
        seqs = self._take_seqs(len(pts))
        if len(pts):
            # keep store-level ids: the tree's counter is advanced to match
            self._tree._next_seq = int(seqs[0])
            self._tree.insert_points(pts, nrm)
        return len(pts)

    def slide_window(self, robot_position) -> bool:
        pos = np.asarray(robot_position, dtype=np.float64).reshape(3)
        if not self._needs_slide(pos):
            return False
        self._window = MapWindow(pos, self._window.half_extent)
        self._tree.delete_outside_box(self._window.lo, self._window.hi)
        self.last_slide_compacted = self._tree.rebuild_if_needed()
        self.slide_count += 1
        return True

    def query_neighbors(self, query, k: int):
        """(points, normals, d2, ids) of the k nearest alive map points."""
        pts, d2, ids, nrm = self._tree.knn(query, k)
        return pts, nrm, d2, ids

    def match(self, points, max_d2: float):
        slots, d2, counts = self._tree.knn_batch(points, 1, max_d2)
        valid = counts > 0
        s = np.where(valid, slots[:, 0], 0)
        return (self._tree.points_at(s), self._tree.data_at(s),
                d2[:, 0], valid)

    def memory_stats(self) -> MapMemoryStats:
        return MapMemoryStats(alive=self._tree.n_alive,
                              allocated=self._tree.n_allocated,
                              bytes_estimate=self._tree.bytes_estimate)

    def alive_points(self):
        pts, ids, nrm = self._tree.alive_points()
        return pts, nrm, ids


class MtoOctreeMapStore(MapStore):
    """Double-buffered octree backend with a background rebuild worker.

    ``sync_slides=True`` (the default) makes ``slide_window`` wait for the
    swap so results are reproducible; the stress path drives rebuilds
    asynchronously via ``request_rebuild(wait=False)``. Queries never block:
    they read whichever fully built structure is active.
    """

    backend_name = "mto"

    def __init__(self, window: MapWindow, slide_margin: float,
                 leaf_size: float = DEFAULT_OCTREE_LEAF, sync_slides: bool = True):
        super().__init__(window, slide_margin)
        self.leaf_size = float(leaf_size)
        self.sync_slides = bool(sync_slides)
        self._active = self._fresh_struct(struct_seq=0)
        self._lock = threading.Lock()
        self._worker_error: BaseException | None = None
        self._journal: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._rebuild_inflight = False
        self.swap_count = 0
        self._jobs: queue.Queue = queue.Queue()
        self._worker = threading.Thread(target=self._worker_loop,
                                        name="mto-rebuild", daemon=True)
        self._worker.start()

    def _fresh_struct(self, struct_seq: int) -> OctreeIndex:
        if self._window.bounded:
            center, half = self._window.center, self._window.half_extent
        else:
            center, half = np.zeros(3), UNBOUNDED_ROOT_HALF
        s = OctreeIndex(center, half, self.leaf_size, struct_seq=struct_seq)
        s.finalized = True
        return s

    # -- worker ------------------------------------------------------------

    def _worker_loop(self):
        while True:
            job = self._jobs.get()
            if job is None:
                return
            window, snapshot, done = job
            try:
                pts, nrm, seqs = snapshot
                keep = window.contains(pts)
                fresh = OctreeIndex(window.center if window.bounded else np.zeros(3),
                                    window.half_extent if window.bounded else UNBOUNDED_ROOT_HALF,
                                    self.leaf_size, struct_seq=self.swap_count + 1)
                fresh.insert(pts[keep], nrm[keep], seqs[keep])
                with self._lock:
                    for jpts, jnrm, jseqs in self._journal:
                        jkeep = window.contains(jpts)
                        fresh.insert(jpts[jkeep], jnrm[jkeep], jseqs[jkeep])
                    self._journal.clear()
                    fresh.finalized = True
                    self._active = fresh  # atomic install; old struct dropped
                    self._rebuild_inflight = False
                    self.swap_count += 1
            except BaseException as exc:  # surfaced on the caller thread
                with self._lock:
                    self._worker_error = exc
                    self._rebuild_inflight = False
            done.set()

    def _start_rebuild(self, window: MapWindow) -> threading.Event:
        with self._lock:
            snapshot = self._active.collect_all()
            self._rebuild_inflight = True
        done = threading.Event()
        self._jobs.put((window, snapshot, done))
        return done

    # -- MapStore interface --------------------------------------------------

    def insert_scan(self, cloud_world: PointCloud) -> int:
        pts, nrm = self._prepare_scan(cloud_world)
        seqs = self._take_seqs(len(pts))
        if len(pts) == 0:
            return 0
        with self._lock:
            self._active.insert(pts, nrm, seqs)
            if self._rebuild_inflight:
                self._journal.append((pts, nrm, seqs))
        return len(pts)

    def slide_window(self, robot_position) -> bool:
        pos = np.asarray(robot_position, dtype=np.float64).reshape(3)
        if not self._needs_slide(pos):
            return False
        self._window = MapWindow(pos, self._window.half_extent)
        done = self._start_rebuild(self._window)
        if self.sync_slides:
            done.wait()
            self._check_worker()
        self.slide_count += 1
        self.last_slide_compacted = True
        return True

    def _check_worker(self):
        if self._worker_error is not None:
            exc = self._worker_error
            self._worker_error = None
            raise RuntimeError("map rebuild worker failed") from exc

    def request_rebuild(self, wait: bool = True) -> threading.Event:
        """Force a rebuild/swap cycle with the current window."""
        done = self._start_rebuild(self._window)
        if wait:
            done.wait()
            self._check_worker()
        return done

    def wait_idle(self):
        while True:
            with self._lock:
                if not self._rebuild_inflight:
                    return
            threading.Event().wait(0.0005)

    def query_neighbors(self, query, k: int):
        struct = self._active
        assert struct.finalized, "query hit a structure that is not fully built"
        self.debug_last_struct_seq = struct.struct_seq
        pid, d2, counts = struct.knn_batch(np.asarray(query).reshape(1, 3), k)
        c = int(counts[0])
        s = pid[0, :c]
        return (struct.points_at(s).copy(), struct.normals_at(s).copy(),
                d2[0, :c].copy(), struct.seq_at(s).copy())

    def match(self, points, max_d2: float):
        struct = self._active
        assert struct.finalized, "query hit a structure that is not fully built"
        self.debug_last_struct_seq = struct.struct_seq
        pid, d2, counts = struct.knn_batch(points, 1, max_d2)
        valid = counts > 0
        s = np.where(valid, pid[:, 0], 0)
        return struct.points_at(s), struct.normals_at(s), d2[:, 0], valid

    def memory_stats(self) -> MapMemoryStats:
        # rebuild scratch lives on the worker and is excluded; after every
        # swap the retired structure is dropped, so allocated == alive
        with self._lock:
            alive = self._active.n_points
            b = self._active.bytes_estimate
        return MapMemoryStats(alive=alive, allocated=alive, bytes_estimate=b)

    def alive_points(self):
        return self._active.collect_all()

    def close(self):
        self._jobs.put(None)
        self._worker.join(timeout=2.0)


def make_map_store(backend: str = "ikd", center=(0.0, 0.0, 0.0),
                   half_extent: float = DEFAULT_HALF_EXTENT,
                   slide_margin: float | None = None,
                   octree_leaf: float = DEFAULT_OCTREE_LEAF,
                   sync_slides: bool = True) -> MapStore:
    """Build a map store; ``half_extent=inf`` gives an unbounded map."""
    window = MapWindow(np.asarray(center, dtype=np.float64), half_extent)
    if slide_margin is None:
        slide_margin = half_extent / 5.0 if np.isfinite(half_extent) else 0.0
    if backend == "ikd":
        return IkdMapStore(window, slide_margin)
    if backend == "mto":
        return MtoOctreeMapStore(window, slide_margin, leaf_size=octree_leaf,
                                 sync_slides=sync_slides)
    raise ValueError(f"unknown map backend {backend!r} (expected 'ikd' or 'mto')")
