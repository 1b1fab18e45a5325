//! Distances between discrete distributions and discretization of 2D targets.
//!
//! `w2_exact` solves the transportation problem with a primal network simplex
//! (block-search pricing, strongly feasible spanning trees) on integer masses.

use crate::error::{Error, Result};
use crate::estimation::{DiscreteDistribution, Grid2D};

/// Masses are scaled to integers summing to this value before transport.
pub const MASS_SCALE: f64 = 1e12;

/// Target density `exp(-U)` normalized over the bins of a grid.
#[derive(Debug, Clone)]
pub struct DiscretizedTarget {
    pub distribution: DiscreteDistribution,
    /// Midpoint-rule estimate of `Z = integral of exp(-U)` over the grid box.
    pub z: f64,
    pub log_z: f64,
}

/// Integrates `exp(-U)` over every bin with a `refine x refine` midpoint rule.
pub fn discretize_target<U>(potential: U, grid: &Grid2D, refine: usize) -> Result<DiscretizedTarget>
where
    U: Fn([f64; 2]) -> f64,
{
    if refine == 0 {
        return Err(Error::InvalidArgument("refine must be at least 1".into()));
    }
    let (hx, hy) = (grid.dx() / refine as f64, grid.dy() / refine as f64);
    let mut neg_u = vec![0.0; grid.num_bins() * refine * refine];
    let mut max = f64::NEG_INFINITY;
    for b in 0..grid.num_bins() {
        let (ix, iy) = (b / grid.bins_y, b % grid.bins_y);
        let x0 = grid.x_min + ix as f64 * grid.dx();
        let y0 = grid.y_min + iy as f64 * grid.dy();
        for a in 0..refine {
            for c in 0..refine {
                let p = [x0 + (a as f64 + 0.5) * hx, y0 + (c as f64 + 0.5) * hy];
                let v = -potential(p);
                if v.is_nan() {
                    return Err(Error::InvalidArgument(format!("potential is NaN at {p:?}")));
                }
                max = max.max(v);
                neg_u[(b * refine + a) * refine + c] = v;
            }
        }
    }
    if !max.is_finite() {
        return Err(Error::InvalidArgument("potential is infinite on the whole grid".into()));
    }
    let weights: Vec<f64> =
        neg_u.chunks_exact(refine * refine).map(|sub| sub.iter().map(|v| (v - max).exp()).sum()).collect();
    let total: f64 = weights.iter().sum();
    let log_z = max + (total * hx * hy).ln();
    Ok(DiscretizedTarget { distribution: DiscreteDistribution::on_grid(*grid, weights)?, z: log_z.exp(), log_z })
}

/// `KL(mu | nu) = sum mu log(mu / nu)` with `0 log 0 = 0`; `+inf` if `mu` charges
/// a point where `nu` vanishes.
pub fn kl_discrete(mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> Result<f64> {
    check_same(mu, nu)?;
    let mut kl = 0.0;
    for (&p, &q) in mu.masses().iter().zip(nu.masses()) {
        if p > 0.0 {
            if q <= 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += p * (p / q).ln();
        }
    }
    Ok(kl.max(0.0))
}

pub fn tv_discrete(mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> Result<f64> {
    check_same(mu, nu)?;
    Ok(0.5 * mu.masses().iter().zip(nu.masses()).map(|(p, q)| (p - q).abs()).sum::<f64>())
}

/// Pinsker's inequality `TV <= sqrt(KL / 2)` with slack `1e-12`.
pub fn pinsker_check(tv: f64, kl: f64) -> bool {
    tv <= (kl / 2.0).sqrt() + 1e-12
}

/// `|mean(mu) - mean(nu)|^2 <= W2^2` with slack `1e-9`.
pub fn mean_error_bound_check(mu: &DiscreteDistribution, nu: &DiscreteDistribution, w2: f64) -> bool {
    let d: f64 = mu.mean().iter().zip(nu.mean()).map(|(a, b)| (a - b) * (a - b)).sum();
    d <= w2 * w2 + 1e-9
}

fn check_same(mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> Result<()> {
    if mu.same_support(nu) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Exact 2-Wasserstein distance with squared Euclidean ground cost.
pub fn w2_exact(mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> Result<f64> {
    Ok(w2_squared_exact(mu, nu)?.sqrt())
}

pub fn w2_squared_exact(mu: &DiscreteDistribution, nu: &DiscreteDistribution) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::Shape(format!("dimensions {} and {} differ", mu.dim(), nu.dim())));
    }
    let a = integer_masses(mu.masses());
    let b = integer_masses(nu.masses());
    let src: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0).collect();
    let dst: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0).collect();
    let mut cost = Vec::with_capacity(src.len() * dst.len());
    for &i in &src {
        let p = mu.point(i);
        for &j in &dst {
            cost.push(p.iter().zip(nu.point(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>());
        }
    }
    let supply: Vec<i64> = src.iter().map(|&i| a[i]).collect();
    let demand: Vec<i64> = dst.iter().map(|&j| b[j]).collect();
    let total = transport(&supply, &demand, &cost)?;
    Ok((total / MASS_SCALE).max(0.0))
}

/// Rounds masses to integers summing to exactly `MASS_SCALE`; the rounding
/// residual goes to the largest entry.
fn integer_masses(masses: &[f64]) -> Vec<i64> {
    let total: f64 = masses.iter().sum();
    let mut out: Vec<i64> = masses.iter().map(|m| (m / total * MASS_SCALE).round() as i64).collect();
    let diff = MASS_SCALE as i64 - out.iter().sum::<i64>();
    if let Some((k, _)) = out.iter().enumerate().max_by_key(|(_, v)| **v) {
        out[k] += diff;
    }
    out
}

/// Minimum-cost transport of integer `supply` to `demand` (equal totals) with
/// dense row-major `cost`; returns the optimal total cost.
pub fn transport(supply: &[i64], demand: &[i64], cost: &[f64]) -> Result<f64> {
    if cost.len() != supply.len() * demand.len() {
        return Err(Error::Shape("cost matrix does not match supports".into()));
    }
    if supply.iter().chain(demand).any(|&v| v < 0) {
        return Err(Error::InvalidArgument("negative mass".into()));
    }
    if supply.iter().sum::<i64>() != demand.iter().sum::<i64>() {
        return Err(Error::InvalidArgument("supply and demand totals differ".into()));
    }
    if supply.is_empty() || demand.is_empty() {
        return Ok(0.0);
    }
    let mut ns = NetworkSimplex::new(supply, demand, cost);
    ns.run();
    ns.total_cost()
}

const UP: i8 = 1;
const DOWN: i8 = -1;
const NONE: usize = usize::MAX;

/// Spanning-tree network simplex on the complete bipartite graph plus one
/// artificial root joined to every node.
struct NetworkSimplex<'a> {
    n1: usize,
    n2: usize,
    cost: &'a [f64],
    artificial_cost: f64,
    root: usize,
    parent: Vec<usize>,
    pred: Vec<usize>,
    dir: Vec<i8>,
    flow: Vec<i64>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    first_child: Vec<usize>,
    next_sib: Vec<usize>,
    prev_sib: Vec<usize>,
    eps: f64,
    next_arc: usize,
    block: usize,
}

impl<'a> NetworkSimplex<'a> {
    fn new(supply: &[i64], demand: &[i64], cost: &'a [f64]) -> Self {
        let (n1, n2) = (supply.len(), demand.len());
        let n = n1 + n2;
        let max_cost = cost.iter().fold(0.0f64, |m, &c| m.max(c.abs()));
        let artificial_cost = 1.0 + max_cost * (n as f64 + 1.0);
        let root = n;
        let mut s = Self {
            n1,
            n2,
            cost,
            artificial_cost,
            root,
            parent: vec![NONE; n + 1],
            pred: vec![NONE; n + 1],
            dir: vec![0; n + 1],
            flow: vec![0; n + 1],
            depth: vec![0; n + 1],
            pi: vec![0.0; n + 1],
            first_child: vec![NONE; n + 1],
            next_sib: vec![NONE; n + 1],
            prev_sib: vec![NONE; n + 1],
            eps: 1e-12 * max_cost.max(1e-300),
            next_arc: 0,
            block: ((n1 * n2 + n) as f64).sqrt().ceil().max(10.0) as usize,
        };
        for v in 0..n {
            s.parent[v] = root;
            s.pred[v] = n1 * n2 + v;
            s.depth[v] = 1;
            s.link_child(root, v);
            if v < n1 {
                s.dir[v] = UP;
                s.flow[v] = supply[v];
                s.pi[v] = -artificial_cost;
            } else {
                s.dir[v] = DOWN;
                s.flow[v] = demand[v - n1];
                s.pi[v] = artificial_cost;
            }
        }
        s
    }

    fn num_arcs(&self) -> usize {
        self.n1 * self.n2 + self.n1 + self.n2
    }

    #[inline]
    fn arc_ends(&self, e: usize) -> (usize, usize) {
        let real = self.n1 * self.n2;
        if e < real {
            (e / self.n2, self.n1 + e % self.n2)
        } else {
            let v = e - real;
            if v < self.n1 {
                (v, self.root)
            } else {
                (self.root, v)
            }
        }
    }

    #[inline]
    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.cost.len() {
            self.cost[e]
        } else {
            self.artificial_cost
        }
    }

    #[inline]
    fn reduced_cost(&self, e: usize) -> f64 {
        let (s, t) = self.arc_ends(e);
        self.arc_cost(e) + self.pi[s] - self.pi[t]
    }

    fn link_child(&mut self, p: usize, v: usize) {
        let head = self.first_child[p];
        self.next_sib[v] = head;
        self.prev_sib[v] = NONE;
        if head != NONE {
            self.prev_sib[head] = v;
        }
        self.first_child[p] = v;
    }

    fn unlink_child(&mut self, v: usize) {
        let p = self.parent[v];
        let (prev, next) = (self.prev_sib[v], self.next_sib[v]);
        if prev != NONE {
            self.next_sib[prev] = next;
        } else {
            self.first_child[p] = next;
        }
        if next != NONE {
            self.prev_sib[next] = prev;
        }
        self.prev_sib[v] = NONE;
        self.next_sib[v] = NONE;
    }

    /// Block search: the most negative reduced cost in the first block that has one.
    fn find_entering(&mut self) -> Option<usize> {
        let m = self.num_arcs();
        let real = self.n1 * self.n2;
        let mut best = NONE;
        let mut best_rc = -self.eps;
        let mut scanned = 0;
        let mut e = self.next_arc;
        let (mut i, mut j) = if e < real { (e / self.n2, e % self.n2) } else { (0, 0) };
        while scanned < m {
            let rc = if e < real {
                self.cost[e] + self.pi[i] - self.pi[self.n1 + j]
            } else {
                self.reduced_cost(e)
            };
            if rc < best_rc {
                best_rc = rc;
                best = e;
            }
            scanned += 1;
            e += 1;
            j += 1;
            if j == self.n2 {
                j = 0;
                i += 1;
            }
            if e == m {
                e = 0;
                i = 0;
                j = 0;
            }
            if scanned % self.block == 0 && best != NONE {
                break;
            }
        }
        self.next_arc = e;
        (best != NONE).then_some(best)
    }

    fn run(&mut self) {
        while let Some(e) = self.find_entering() {
            self.pivot(e);
        }
    }

    fn pivot(&mut self, e: usize) {
        let (s, t) = self.arc_ends(e);
        // apex of the cycle s -> t -> ... -> join -> ... -> s
        let (mut a, mut b) = (s, t);
        while a != b {
            if self.depth[a] >= self.depth[b] {
                a = self.parent[a];
            } else {
                b = self.parent[b];
            }
        }
        let join = a;

        // arcs on the s side are traversed downward, on the t side upward
        let mut delta = i64::MAX;
        let mut leave = NONE;
        let mut v = s;
        while v != join {
            if self.dir[v] == UP && self.flow[v] < delta {
                delta = self.flow[v];
                leave = v;
            }
            v = self.parent[v];
        }
        let mut v = t;
        while v != join {
            if self.dir[v] == DOWN && self.flow[v] <= delta {
                delta = self.flow[v];
                leave = v;
            }
            v = self.parent[v];
        }
        debug_assert!(leave != NONE, "uncapacitated entering arc with no blocking arc");

        if delta > 0 {
            let mut v = s;
            while v != join {
                self.flow[v] += if self.dir[v] == DOWN { delta } else { -delta };
                v = self.parent[v];
            }
            let mut v = t;
            while v != join {
                self.flow[v] += if self.dir[v] == UP { delta } else { -delta };
                v = self.parent[v];
            }
        }

        // endpoint of the entering arc inside the detached subtree
        let mut in_subtree = false;
        let mut v = s;
        while v != join {
            if v == leave {
                in_subtree = true;
                break;
            }
            v = self.parent[v];
        }
        let (u_in, v_in) = if in_subtree { (s, t) } else { (t, s) };

        // reverse the tree path u_in -> leave and hang it below v_in
        let mut path = vec![u_in];
        while *path.last().unwrap() != leave {
            let last = *path.last().unwrap();
            path.push(self.parent[last]);
        }
        let old: Vec<(usize, i8, i64)> = path.iter().map(|&x| (self.pred[x], self.dir[x], self.flow[x])).collect();
        for &x in &path {
            self.unlink_child(x);
        }
        for k in (1..path.len()).rev() {
            let (x, p) = (path[k], path[k - 1]);
            self.parent[x] = p;
            self.pred[x] = old[k - 1].0;
            self.dir[x] = -old[k - 1].1;
            self.flow[x] = old[k - 1].2;
            self.link_child(p, x);
        }
        self.parent[u_in] = v_in;
        self.pred[u_in] = e;
        self.dir[u_in] = if s == u_in { UP } else { DOWN };
        self.flow[u_in] = delta;
        self.link_child(v_in, u_in);

        self.refresh_subtree(u_in);
    }

    /// Recomputes depth and potentials below (and including) `top`.
    fn refresh_subtree(&mut self, top: usize) {
        let mut stack = vec![top];
        while let Some(v) = stack.pop() {
            let p = self.parent[v];
            self.depth[v] = self.depth[p] + 1;
            let c = self.arc_cost(self.pred[v]);
            self.pi[v] = if self.dir[v] == UP { self.pi[p] - c } else { self.pi[p] + c };
            let mut c = self.first_child[v];
            while c != NONE {
                stack.push(c);
                c = self.next_sib[c];
            }
        }
    }

    fn total_cost(&self) -> Result<f64> {
        let real = self.n1 * self.n2;
        let mut total = 0.0;
        for v in 0..self.root {
            let e = self.pred[v];
            if e >= real {
                if self.flow[v] != 0 {
                    return Err(Error::InvalidArgument("transport problem is infeasible".into()));
                }
            } else {
                total += self.flow[v] as f64 * self.cost[e];
            }
        }
        Ok(total)
    }
}
