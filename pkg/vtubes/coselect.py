import logging
from collections import namedtuple
import numpy as np
import scipy.sparse
from scipy.sparse.csgraph import connected_components
from .base import TubeFlag
from .config import SelectConfig
from .error import DataError, UsageError
from .mask import mask_iou

"""
Co-selection of a compact, low-overlap subset of tubes by minimizing the
binary energy

    F(b) = sum_i b_i (eps1 - theta_i) + eps2 sum_{i<j} b_i b_j phi_ij

where theta_i is the tube score and phi_ij >= 0 penalizes temporal mask
overlap.  The energy is not submodular in general.  `minimize` runs an exact
depth-first branch-and-bound on each connected component of the overlap
graph; `exact_minimize` enumerates all assignments and serves as its oracle.
"""

logger = logging.getLogger(__name__)

EXACT_MAX = 20
ENUM_CHUNK = 1 << 16
TIE_TOL = 1e-12

SelectionResult = namedtuple('SelectionResult',
        ['selection', 'energy', 'nodes', 'exhausted'])

class SelectionProblem(object):
    """
    theta: (N,) tube scores
    pairwise: (N, N) symmetric sparse matrix of overlap penalties, zero
        diagonal, nonnegative entries
    """
    def __init__(self, theta, pairwise, eps1, eps2, span=None, tube_ids=None):
        self.theta = np.asarray(theta, dtype=float).reshape(-1)
        n = len(self.theta)
        self.pairwise = scipy.sparse.csr_matrix(pairwise, shape=(n, n),
                dtype=float)
        self.eps1 = float(eps1)
        self.eps2 = float(eps2)
        self.span = span
        self.tube_ids = list(range(n)) if tube_ids is None else list(tube_ids)
        self.check()

    def __repr__(self):
        return (f'{type(self).__qualname__}(n={self.n}, '
                f'pairs={self.pairwise.nnz // 2}, eps1={self.eps1}, '
                f'eps2={self.eps2}, span={self.span})')

    def check(self):
        W = self.pairwise
        if len(self.tube_ids) != self.n:
            raise DataError(
                f'{type(self).__qualname__}: {len(self.tube_ids)} tube ids for '
                f'{self.n} tubes')
        if self.eps2 < 0:
            raise DataError(
                f'{type(self).__qualname__}: eps2 must be >= 0, got {self.eps2}')
        if W.nnz == 0:
            return
        if W.data.min() < 0:
            raise DataError(
                f'{type(self).__qualname__}: pairwise penalties must be >= 0')
        if np.any(W.diagonal() != 0):
            raise DataError(
                f'{type(self).__qualname__}: pairwise diagonal must be zero')
        asym = abs(W - W.T)
        if asym.nnz and asym.max() > 1e-12:
            raise DataError(
                f'{type(self).__qualname__}: pairwise matrix is not symmetric')

    @property
    def n(self):
        return len(self.theta)

    @property
    def unary(self):
        return self.eps1 - self.theta

    def subproblem(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return SelectionProblem(self.theta[idx], self.pairwise[idx][:, idx],
                self.eps1, self.eps2, self.span,
                [self.tube_ids[i] for i in idx])

    def to_dict(self):
        upper = scipy.sparse.triu(self.pairwise, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return { 'theta': self.theta.tolist(),
                'pairwise': [[int(upper.row[k]), int(upper.col[k]),
                    float(upper.data[k])] for k in order],
                'eps1': self.eps1, 'eps2': self.eps2,
                'span': None if self.span is None else list(self.span),
                'tube_ids': self.tube_ids }

    @classmethod
    def from_dict(cls, d):
        n = len(d['theta'])
        rows, cols, vals = [], [], []
        for i, j, v in d['pairwise']:
            rows += [i, j]
            cols += [j, i]
            vals += [v, v]
        W = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, n))
        span = d.get('span')
        return cls(d['theta'], W, d['eps1'], d['eps2'],
                None if span is None else tuple(span), d.get('tube_ids'))

    @classmethod
    def from_tubes(cls, tubes, eps1, eps2, span=None):
        """
        Build the problem over {tubes}, with penalties integrated over the
        frames of {span} (all frames if None).  Tubes need a 'total' score.
        """
        missing = [t.id for t in tubes if 'total' not in t.scores]
        if missing:
            raise DataError(
                f'{cls.__qualname__}: tubes {missing[:5]} have not been scored')
        theta = [t.scores['total'] for t in tubes]
        return cls(theta, overlap_matrix(tubes, span), eps1, eps2, span,
                [t.id for t in tubes])

def _bbox_overlap(a, b):
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]

def pairwise_overlap(ti, tj, span=None, bboxes=None):
    """
    sum over co-visible frames of ln(1 + IoU(m_i, m_j)).  Frames where either
    tube has no mask contribute 0.
    """
    frames = set(ti.inlier_frames) & set(tj.inlier_frames)
    if span is not None:
        frames = { t for t in frames if span[0] <= t <= span[1] }
    total = 0.0
    for t in sorted(frames):
        mi, mj = ti.mask_at(t), tj.mask_at(t)
        if bboxes is not None:
            bi, bj = bboxes[(ti.id, t)], bboxes[(tj.id, t)]
            if bi is None or bj is None or not _bbox_overlap(bi, bj):
                continue
        total += np.log1p(mask_iou(mi, mj))
    return float(total)

def overlap_matrix(tubes, span=None):
    n = len(tubes)
    bboxes = {}
    for tube in tubes:
        for t in tube.inlier_frames:
            bboxes[(tube.id, t)] = tube.mask_at(t).bbox()
    spans = [tube.span for tube in tubes]
    rows, cols, vals = [], [], []
    for i in range(n):
        for j in range(i + 1, n):
            (a0, a1), (b0, b1) = spans[i], spans[j]
            if a1 < b0 or b1 < a0:
                continue
            phi = pairwise_overlap(tubes[i], tubes[j], span, bboxes)
            if phi > 0:
                rows += [i, j]
                cols += [j, i]
                vals += [phi, phi]
    return scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

def energy(b, problem):
    b = np.asarray(b, dtype=bool).reshape(-1)
    if len(b) != problem.n:
        raise UsageError(
            f'energy: assignment has {len(b)} entries for {problem.n} tubes')
    x = b.astype(float)
    pair = 0.5 * float(x @ (problem.pairwise @ x))
    return float(problem.unary @ x) + problem.eps2 * pair

def greedy(problem):
    """
    Add tubes in decreasing score order whenever the addition lowers the
    energy
    """
    n = problem.n
    b = np.zeros(n, dtype=bool)
    link = np.zeros(n)
    u = problem.unary
    W = problem.pairwise
    for i in np.lexsort((np.arange(n), -problem.theta)):
        if u[i] + link[i] < 0:
            b[i] = True
            link += problem.eps2 * W.getrow(i).toarray().ravel()
    return b

def _better(cand, best):
    # (energy, count, code): lower energy, then fewer selected, then smaller code
    if best is None:
        return True
    if cand[0] < best[0] - TIE_TOL:
        return True
    if cand[0] > best[0] + TIE_TOL:
        return False
    return cand[1:] < best[1:]

def exact_minimize(problem):
    """
    Exhaustive minimization over all 2^N assignments.  Ties go to fewer
    selected tubes, then to the lexicographically smallest assignment.
    Refuses problems with more than 20 tubes.
    """
    n = problem.n
    if n > EXACT_MAX:
        raise UsageError(
            f'exact_minimize: refusing {n} tubes (at most {EXACT_MAX})')
    if n == 0:
        return np.zeros(0, dtype=bool)
    u = problem.unary
    W = problem.pairwise.toarray() * problem.eps2
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    best = None
    for start in range(0, 1 << n, ENUM_CHUNK):
        codes = np.arange(start, min(start + ENUM_CHUNK, 1 << n), dtype=np.int64)
        B = ((codes[:, None] >> shifts) & 1).astype(float)
        E = B @ u + 0.5 * np.einsum('ki,ki->k', B @ W, B)
        count = B.sum(axis=1)
        emin = E.min()
        near = np.flatnonzero(E <= emin + TIE_TOL)
        k = near[np.lexsort((codes[near], count[near]))[0]]
        cand = (float(E[k]), int(count[k]), int(codes[k]))
        if _better(cand, best):
            best = cand
    return ((best[2] >> shifts) & 1).astype(bool)

class _BranchAndBound(object):
    """
    Depth-first branch-and-bound over one connected component.  Variables
    are decided in decreasing |eps1 - theta| order; of the two children the
    one with the lower bound is explored first.  The bound of a node is its
    committed energy plus, for each undecided tube, min(0, u_i + eps2 *
    penalties to the tubes already selected).  Penalties among undecided
    tubes are nonnegative and dropped, so the bound never overestimates.
    """
    def __init__(self, problem, budget):
        self.u = problem.unary
        self.W = problem.pairwise.toarray() * problem.eps2
        self.n = problem.n
        self.budget = budget
        self.order = np.lexsort((np.arange(self.n), -np.abs(self.u)))
        self.nodes = 0
        self.exhausted = False

    def _bound(self, depth, e, link):
        rest = self.order[depth:]
        return e + float(np.minimum(0.0, self.u[rest] + link[rest]).sum())

    def run(self, incumbent):
        best_b = incumbent.copy()
        best_e = energy_dense(best_b, self.u, self.W)
        b = np.zeros(self.n, dtype=bool)
        link = np.zeros(self.n)
        stack = [('enter', 0, 0.0, self._bound(0, 0.0, link))]
        while stack:
            op, *args = stack.pop()
            if op == 'set':
                i, = args
                b[i] = True
                link += self.W[i]
                continue
            if op == 'unset':
                i, = args
                b[i] = False
                link -= self.W[i]
                continue
            depth, e, bound = args
            if bound >= best_e - TIE_TOL:
                continue
            self.nodes += 1
            if self.nodes > self.budget:
                self.exhausted = True
                break
            if depth == self.n:
                best_b, best_e = b.copy(), e
                continue
            i = self.order[depth]
            e_on = e + self.u[i] + link[i]
            bound_off = self._bound(depth + 1, e, link)
            bound_on = self._bound(depth + 1, e_on, link + self.W[i])
            off = [('enter', depth + 1, e, bound_off)]
            on = [('unset', i), ('enter', depth + 1, e_on, bound_on), ('set', i)]
            # the child popped first is pushed last
            if bound_on < bound_off:
                stack.extend(off)
                stack.extend(on)
            else:
                stack.extend(on)
                stack.extend(off)
        return best_b, best_e

def energy_dense(b, u, W):
    x = b.astype(float)
    return float(u @ x + 0.5 * x @ W @ x)

def minimize(problem, node_budget=None):
    """
    Minimize the co-selection energy.  Tubes with theta <= eps1 are never
    selected, since with nonnegative penalties dropping one never raises the
    energy.  Independent components of the overlap graph among the remaining
    tubes are solved separately, each seeded with the greedy solution.
    Returns a SelectionResult; {exhausted} is set when some component ran out
    of nodes and returned its incumbent.
    """
    if node_budget is None:
        node_budget = SelectConfig().node_budget
    n = problem.n
    b = np.zeros(n, dtype=bool)
    if n == 0:
        return SelectionResult(b, 0.0, 0, False)
    cand = np.flatnonzero(problem.unary < 0)
    if len(cand) == 0:
        return SelectionResult(b, 0.0, 0, False)
    ncomp, labels = connected_components(problem.pairwise[cand][:, cand],
            directed=False)
    nodes, exhausted = 0, False
    for c in range(ncomp):
        idx = cand[labels == c]
        if len(idx) == 1:
            i = idx[0]
            b[i] = problem.unary[i] < 0
            continue
        sub = problem.subproblem(idx)
        solver = _BranchAndBound(sub, max(node_budget - nodes, 1))
        sol, _ = solver.run(greedy(sub))
        b[idx] = sol
        nodes += solver.nodes
        if solver.exhausted:
            exhausted = True
            logger.warning(f'minimize: node budget exhausted on a component of '
                    f'{len(idx)} tubes; returning the incumbent')
    return SelectionResult(b, energy(b, problem), nodes, exhausted)

def batch_spans(tubes, batch_len):
    """
    Consecutive [start, end] frame ranges of {batch_len} frames, starting at
    frame 0 and covering every tube
    """
    if batch_len < 1:
        raise UsageError(f'batch_len must be >= 1, got {batch_len}')
    if len(tubes) == 0:
        return []
    last = max(t.span[1] for t in tubes)
    return [(s, s + batch_len - 1) for s in range(0, last + 1, batch_len)]

def batch_problems(tubes, eps1, eps2, batch_len=100):
    """
    Yields (span, batch tubes, SelectionProblem) per batch containing tubes
    """
    for span in batch_spans(tubes, batch_len):
        batch = [t for t in tubes if t.span[0] <= span[1] and t.span[1] >= span[0]]
        if batch:
            yield span, batch, SelectionProblem.from_tubes(batch, eps1, eps2, span)

def coselect_batches(tubes, eps1, eps2, batch_len=100, node_budget=None,
        on_problem=None):
    """
    Solve each batch independently over the tubes intersecting it.  A tube is
    kept iff it is selected in every batch it intersects.  Sets tube.selected
    on every tube and returns the kept tubes ordered by id.  {on_problem}, if
    given, is called with each batch's SelectionProblem.
    """
    batches = batch_problems(tubes, eps1, eps2, batch_len)
    return solve_batches(tubes, batches, node_budget, on_problem)

def solve_batches(tubes, batches, node_budget=None, on_problem=None):
    """
    The merge step of coselect_batches over prepared (span, batch tubes,
    SelectionProblem) triples
    """
    verdict = { t.id: True for t in tubes }
    for span, batch, problem in batches:
        _solve_batch(span, batch, problem, verdict, node_budget, on_problem)
    for tube in tubes:
        tube.selected = verdict[tube.id]
    return sorted((t for t in tubes if t.selected), key=lambda t: t.id)

def _solve_batch(span, batch, problem, verdict, node_budget, on_problem):
    if on_problem is not None:
        on_problem(problem)
    result = minimize(problem, node_budget)
    for tube, sel in zip(batch, result.selection):
        verdict[tube.id] = verdict[tube.id] and bool(sel)
        if result.exhausted:
            tube.add_flag(TubeFlag.BUDGET_EXHAUSTED)
    logger.debug(f'coselect_batches: frames {span[0]}-{span[1]}: '
            f'{int(result.selection.sum())} of {len(batch)} tubes, energy '
            f'{result.energy:.4f}, {result.nodes} nodes')

class BatchSelector(object):
    """
    Batch co-selection over tubes that arrive as enumeration finishes them.

    Tubes are added with add().  advance({frontier}) solves every batch that
    ends before {frontier}, the first frame a tube still to come may cover,
    and returns the tubes whose verdict is final: those ending inside a
    solved batch.  finish() solves the remaining batches.  Batches and
    verdicts equal those of coselect_batches over the whole tube set, and a
    tube is held only until its last batch is solved.
    """
    def __init__(self, eps1, eps2, batch_len=100, node_budget=None,
            on_problem=None):
        if batch_len < 1:
            raise UsageError(f'batch_len must be >= 1, got {batch_len}')
        self.eps1 = eps1
        self.eps2 = eps2
        self.batch_len = batch_len
        self.node_budget = node_budget
        self.on_problem = on_problem
        self.pending = []
        self.verdict = {}
        self.start = 0        # first frame of the next unsolved batch
        self.num_kept = 0
        self.num_released = 0

    def __repr__(self):
        return (f'{type(self).__qualname__}(pending={len(self.pending)}, '
                f'next batch at {self.start})')

    def add(self, tubes):
        for tube in tubes:
            self.pending.append(tube)
            self.verdict[tube.id] = True

    def advance(self, frontier):
        released = []
        while self.start + self.batch_len - 1 < frontier:
            released.extend(self._solve_next())
        return released

    def finish(self):
        released = []
        while self.pending:
            released.extend(self._solve_next())
        return released

    def _solve_next(self):
        span = (self.start, self.start + self.batch_len - 1)
        self.start += self.batch_len
        batch = sorted((t for t in self.pending if t.span[0] <= span[1]),
                key=lambda t: t.id)
        if batch:
            problem = SelectionProblem.from_tubes(batch, self.eps1, self.eps2, span)
            _solve_batch(span, batch, problem, self.verdict, self.node_budget,
                    self.on_problem)
        done = [t for t in batch if t.span[1] <= span[1]]
        self.pending = [t for t in self.pending if t.span[1] > span[1]]
        for tube in done:
            tube.selected = self.verdict.pop(tube.id)
            self.num_kept += int(tube.selected)
        self.num_released += len(done)
        return done
