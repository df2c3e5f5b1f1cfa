"""Global trajectory optimization over subframe-centre poses.

The graph is a dead-reckoning odometry chain plus loop-closure chords, each
factor a relative-pose measurement with a 6x6 covariance on the right
tangent of the measurement (M_obs = M_true * Exp(eps)). The first node
carries a hard anchor prior. Solving is warm-started batch
Levenberg-Marquardt: after each batch of new factors the whole graph is
re-linearized from the previous solution, so the incremental result matches
a cold batch solve at the shared fixed point.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose3, log_residual, se3_adjoint, se3_exp, se3_jr_inv


class GraphDisconnectedError(RuntimeError):
    def __init__(self, components):
        self.components = components
        super().__init__(
            "pose graph is disconnected; components: "
            + "; ".join(",".join(str(i) for i in sorted(c)) for c in components)
        )


@dataclass(frozen=True)
class OdometryFactor:
    """Relative-pose measurement between consecutive trajectory nodes."""

    from_id: int
    to_id: int
    measurement: Pose3
    covariance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "covariance", _check_cov(self.covariance))


@dataclass(frozen=True)
class LoopFactor:
    """Relative-pose measurement between non-consecutive nodes."""

    from_id: int
    to_id: int
    measurement: Pose3
    covariance: np.ndarray

    def __post_init__(self):
        if self.from_id == self.to_id:
            raise ValueError("loop factor cannot connect a node to itself")
        object.__setattr__(self, "covariance", _check_cov(self.covariance))


def _check_cov(cov):
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (6, 6):
        raise ValueError("covariance must be 6x6")
    if np.abs(cov - cov.T).max() > 1e-9:
        raise ValueError("covariance must be symmetric")
    if np.linalg.eigvalsh(cov).min() <= 0.0:
        raise ValueError("covariance must be positive definite")
    return cov


@dataclass
class SolveInfo:
    iterations: int = 0
    cost_history: list = field(default_factory=list)
    gradient_norm: float = np.inf

    @property
    def final_cost(self):
        return self.cost_history[-1] if self.cost_history else np.nan


class PoseGraph:
    """Anchor prior + odometry chain + loop chords over Pose3 nodes."""

    def __init__(self, anchor_sigma=1e-9):
        self.nodes = {}
        self._order = []
        self.odometry = []
        self.loops = []
        self.anchor_id = None
        self.anchor_pose = None
        self.anchor_sigma = anchor_sigma

    def add_node(self, node_id, pose):
        if node_id in self.nodes:
            raise ValueError(f"node {node_id} already exists")
        if self._order and node_id <= self._order[-1]:
            raise ValueError("node ids must be strictly increasing")
        self.nodes[node_id] = pose
        self._order.append(node_id)
        if self.anchor_id is None:
            self.anchor_id = node_id
            self.anchor_pose = pose

    def add_odometry(self, factor):
        """Append a chain factor; creates the target node at the composed
        dead-reckoning pose when it does not exist yet."""
        if factor.from_id not in self.nodes:
            raise ValueError(f"unknown from node {factor.from_id}")
        for f in self.odometry:
            if f.from_id == factor.from_id and f.to_id == factor.to_id:
                raise ValueError("duplicate consecutive odometry factor")
        if factor.to_id not in self.nodes:
            self.add_node(factor.to_id, self.nodes[factor.from_id] @ factor.measurement)
        pos_from = self._order.index(factor.from_id)
        if self._order[pos_from + 1] != factor.to_id:
            raise ValueError("odometry factors must connect consecutive nodes")
        self.odometry.append(factor)
        return self

    def add_loop_closure(self, factor):
        if factor.from_id not in self.nodes or factor.to_id not in self.nodes:
            raise ValueError("loop factors require both nodes to exist")
        self.loops.append(factor)
        return self

    def clear_loops(self):
        self.loops = []

    @property
    def node_ids(self):
        return list(self._order)

    def poses(self):
        return {nid: self.nodes[nid] for nid in self._order}

    def set_poses(self, poses):
        for nid, pose in poses.items():
            if nid not in self.nodes:
                raise ValueError(f"unknown node {nid}")
            self.nodes[nid] = pose

    def _factors(self):
        return list(self.odometry) + list(self.loops)

    def _check_connected(self):
        parent = {nid: nid for nid in self._order}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for f in self._factors():
            ra, rb = find(f.from_id), find(f.to_id)
            if ra != rb:
                parent[ra] = rb
        comps = {}
        for nid in self._order:
            comps.setdefault(find(nid), set()).add(nid)
        if len(comps) > 1:
            raise GraphDisconnectedError(list(comps.values()))

    def cost(self, poses=None):
        """Total weighted squared residual (0.5 * chi^2) incl. the anchor."""
        poses = poses if poses is not None else self.nodes
        total = 0.0
        for f, w in self._whitened():
            e = w @ log_residual(f.measurement, poses[f.from_id].inverse() @ poses[f.to_id])
            total += float(e @ e)
        e = log_residual(self.anchor_pose, poses[self.anchor_id]) / self.anchor_sigma
        total += float(e @ e)
        return 0.5 * total

    def _whitened(self):
        out = []
        for f in self._factors():
            w = np.linalg.cholesky(np.linalg.inv(f.covariance)).T
            out.append((f, w))
        return out

    def _linearize(self, poses, whitened, index):
        n = len(self._order)
        rows = 6 * len(whitened) + 6
        jac = np.zeros((rows, 6 * n))
        res = np.zeros(rows)
        r = 0
        for f, w in whitened:
            ti = poses[f.from_id]
            tj = poses[f.to_id]
            rel = ti.inverse() @ tj
            e = log_residual(f.measurement, rel)
            jr = se3_jr_inv(e)
            ci = 6 * index[f.from_id]
            cj = 6 * index[f.to_id]
            res[r : r + 6] = w @ e
            jac[r : r + 6, cj : cj + 6] = w @ jr
            jac[r : r + 6, ci : ci + 6] = -(w @ jr @ se3_adjoint(rel.inverse()))
            r += 6
        e = log_residual(self.anchor_pose, poses[self.anchor_id])
        ca = 6 * index[self.anchor_id]
        res[r : r + 6] = e / self.anchor_sigma
        jac[r : r + 6, ca : ca + 6] = se3_jr_inv(e) / self.anchor_sigma
        return res, jac

    def optimize(
        self,
        initialization="current",
        max_iters=100,
        rel_tol=1e-12,
        grad_tol=1e-9,
        init_lambda=1e-6,
    ):
        """Minimize the graph cost with Levenberg-Marquardt.

        ``initialization`` picks the starting point: "current" warm-starts
        from the stored node poses, "odometry" re-integrates the chain from
        the anchor. Updates the stored poses and returns SolveInfo; accepted
        costs are strictly decreasing.
        """
        if not self._order:
            raise ValueError("empty graph")
        self._check_connected()
        if initialization == "odometry":
            poses = {self.anchor_id: self.anchor_pose}
            chain = {f.from_id: f for f in self.odometry}
            nid = self.anchor_id
            while nid in chain:
                f = chain[nid]
                poses[f.to_id] = poses[nid] @ f.measurement
                nid = f.to_id
            for k in self._order:
                poses.setdefault(k, self.nodes[k])
        elif initialization == "current":
            poses = dict(self.nodes)
        else:
            raise ValueError("initialization must be 'current' or 'odometry'")

        index = {nid: k for k, nid in enumerate(self._order)}
        whitened = self._whitened()
        res, jac = self._linearize(poses, whitened, index)
        cost = 0.5 * float(res @ res)
        info = SolveInfo(cost_history=[cost])
        lam = init_lambda
        n = len(self._order)
        for it in range(max_iters):
            h = jac.T @ jac
            g = jac.T @ res
            info.gradient_norm = float(np.abs(g).max())
            if info.gradient_norm < grad_tol:
                break
            stepped = False
            while lam <= 1e12:
                try:
                    delta = np.linalg.solve(h + lam * np.eye(6 * n), -g)
                except np.linalg.LinAlgError:
                    lam *= 10.0
                    continue
                trial = {
                    nid: poses[nid] @ se3_exp(delta[6 * k : 6 * k + 6])
                    for k, nid in enumerate(self._order)
                }
                res_new, jac_new = self._linearize(trial, whitened, index)
                cost_new = 0.5 * float(res_new @ res_new)
                if np.isfinite(cost_new) and cost_new < cost:
                    poses = trial
                    rel_drop = (cost - cost_new) / max(cost, 1e-300)
                    cost = cost_new
                    res, jac = res_new, jac_new
                    info.cost_history.append(cost)
                    lam = max(lam / 10.0, 1e-12)
                    stepped = True
                    if rel_drop < rel_tol:
                        it = max_iters
                    break
                lam *= 10.0
            info.iterations += 1
            if not stepped or it >= max_iters:
                break
        g = jac.T @ res
        info.gradient_norm = float(np.abs(g).max())
        self.nodes.update(poses)
        return info
