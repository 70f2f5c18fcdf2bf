//! Boltzmann-Fermi-Dirac collision operator on a velocity grid.
//!
//! Post-collisional velocities rarely land on grid nodes. Each collision
//! `(v, v_*, sigma)` is replaced by two grid pairs `(lam, S - lam)` and
//! `(mu, S - mu)` that carry the exact total momentum `S` of the incoming
//! pair, one with energy just below and one just above the exact value. They
//! are mixed with weights `(1 - r, r)` chosen so that energy is conserved
//! too. Occupations at the post-collisional points are interpolated in
//! log-odds, so every Fermi-Dirac state is an exact discrete equilibrium and
//! the scheme keeps a discrete H-theorem.
//!
//! Each unordered collision is stored once, as `(i < j, sigma)` with `sigma`
//! in the first half of the antipodal sphere rule.

use crate::equilibria::{fermi, log_odds, LOGIT_MAX};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::phase_space::{SphereQuadrature, VelocityGrid};
use std::path::Path;

/// `b(|z|, cos theta)` on a rectangular table, bilinear in between and
/// clamped at the edges. Values are relative to the amplitude, in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub z: Vec<f64>,
    pub cos: Vec<f64>,
    /// Row-major `z.len() x cos.len()`.
    pub values: Vec<f64>,
}

impl Table {
    /// Text format: optional `#` comments, then `n_z n_cos`, the `n_z` speeds,
    /// the `n_cos` cosines and `n_z` rows of `n_cos` values.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tok = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let mut next_num = |what: &str| -> Result<f64> {
            let t = tok
                .next()
                .ok_or_else(|| Error::Config(format!("cross-section table: missing {what}")))?;
            t.parse::<f64>()
                .map_err(|_| Error::Config(format!("cross-section table: bad number {t:?}")))
        };
        let nz = next_num("n_z")? as usize;
        let nc = next_num("n_cos")? as usize;
        if nz == 0 || nc == 0 {
            return Err(Error::Config("cross-section table: empty axis".into()));
        }
        let z = (0..nz).map(|_| next_num("z")).collect::<Result<Vec<_>>>()?;
        let cos = (0..nc)
            .map(|_| next_num("cos"))
            .collect::<Result<Vec<_>>>()?;
        let values = (0..nz * nc)
            .map(|_| next_num("value"))
            .collect::<Result<Vec<_>>>()?;
        let t = Self { z, cos, values };
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        let sorted = |a: &[f64]| a.windows(2).all(|w| w[0] < w[1]);
        if !sorted(&self.z) || self.z[0] < 0.0 {
            return Err(Error::Config(
                "cross-section table: speeds must be nonnegative and increasing".into(),
            ));
        }
        if !sorted(&self.cos) || self.cos[0] < -1.0 || *self.cos.last().unwrap() > 1.0 {
            return Err(Error::Config(
                "cross-section table: cosines must increase within [-1, 1]".into(),
            ));
        }
        if self.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(
                "cross-section table: values must lie in [0, 1] (relative to the amplitude)".into(),
            ));
        }
        Ok(())
    }

    fn eval(&self, z: f64, c: f64) -> f64 {
        let (iz, tz) = locate(&self.z, z);
        let (ic, tc) = locate(&self.cos, c);
        let nc = self.cos.len();
        let at = |a: usize, b: usize| self.values[a * nc + b];
        let iz1 = (iz + 1).min(self.z.len() - 1);
        let ic1 = (ic + 1).min(nc - 1);
        (1.0 - tz) * ((1.0 - tc) * at(iz, ic) + tc * at(iz, ic1))
            + tz * ((1.0 - tc) * at(iz1, ic) + tc * at(iz1, ic1))
    }
}

/// Interval index and fraction of `x` on a sorted axis, clamped.
fn locate(axis: &[f64], x: f64) -> (usize, f64) {
    if axis.len() == 1 || x <= axis[0] {
        return (0, 0.0);
    }
    let last = axis.len() - 1;
    if x >= axis[last] {
        return (last, 0.0);
    }
    let k = axis.partition_point(|&a| a <= x) - 1;
    (k, (x - axis[k]) / (axis[k + 1] - axis[k]))
}

#[derive(Debug, Clone, PartialEq)]
pub enum CrossSectionKind {
    Constant,
    Tabulated(Table),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    pub kind: CrossSectionKind,
    pub amplitude: f64,
    /// Largest tabulated speed; beyond it the last row is used.
    pub support_radius: f64,
}

impl CrossSection {
    pub fn constant(amplitude: f64) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::Config(
                "cross-section amplitude must be positive".into(),
            ));
        }
        Ok(Self {
            kind: CrossSectionKind::Constant,
            amplitude,
            support_radius: f64::INFINITY,
        })
    }

    pub fn tabulated(table: Table, amplitude: f64) -> Result<Self> {
        let mut b = Self::constant(amplitude)?;
        b.support_radius = *table.z.last().unwrap();
        b.kind = CrossSectionKind::Tabulated(table);
        Ok(b)
    }

    #[inline]
    pub fn eval(&self, z: f64, cos_theta: f64) -> f64 {
        match &self.kind {
            CrossSectionKind::Constant => self.amplitude,
            CrossSectionKind::Tabulated(t) => self.amplitude * t.eval(z, cos_theta),
        }
    }

    /// Positivity on `B(0, 2R)`: the bilinear table is positive there iff its
    /// nodes in the covering rows are.
    pub fn check_positive_on(&self, two_r: f64) -> Result<()> {
        if let CrossSectionKind::Tabulated(t) = &self.kind {
            let nc = t.cos.len();
            let mut rows = t.z.iter().take_while(|&&z| z < two_r).count() + 1;
            rows = rows.min(t.z.len());
            if t.values[..rows * nc].iter().any(|&v| v <= 0.0) {
                return Err(Error::Config(format!(
                    "cross section vanishes somewhere on |z| <= {two_r}"
                )));
            }
        }
        Ok(())
    }
}

/// `v' = (v+v_*)/2 + |v-v_*| sigma/2`, `v_*' = (v+v_*)/2 - |v-v_*| sigma/2`.
pub fn post_collision_velocities(v: &[f64], v_star: &[f64], sigma: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let g: f64 = v
        .iter()
        .zip(v_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let mut vp = Vec::with_capacity(v.len());
    let mut vsp = Vec::with_capacity(v.len());
    for a in 0..v.len() {
        let c = 0.5 * (v[a] + v_star[a]);
        vp.push(c + 0.5 * g * sigma[a]);
        vsp.push(c - 0.5 * g * sigma[a]);
    }
    (vp, vsp)
}

/// Occupation statistics. `Classical` drops the Pauli factors and
/// interpolates `log f` instead of the log-odds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Statistics {
    FermiDirac { delta: f64 },
    Classical,
}

/// One reduced collision: nodes `[i, j, lam, lam*, mu, mu*]`, mixing weight
/// `r` on the `mu` pair and combined weight `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triple {
    pub nodes: [u32; 6],
    pub r: f64,
    pub w: f64,
}

/// Anything that can enumerate the reduced collisions in a fixed order, in
/// independently processable units.
pub trait TripleSource: Sync {
    fn n_nodes(&self) -> usize;
    fn node_weights(&self) -> &[f64];
    fn units(&self) -> usize;
    fn min_chunk(&self) -> usize;
    fn visit<F: FnMut(&Triple)>(&self, lo: usize, hi: usize, sink: F);
}

#[derive(Clone, Copy)]
struct Candidate {
    m: i64,
    dist: f64,
    flat: usize,
    partner: usize,
    at: [i64; 10],
}

/// Stencil of one `(v - v_*, sigma)` class relative to `floor(S/2)`. The
/// unconstrained choice of grid pairs is invariant under translations of
/// the incoming pair, so it is computed once per velocity difference.
#[derive(Debug, Clone, Copy)]
struct Offsets {
    lam: [i16; 10],
    mu: [i16; 10],
    r: f64,
    /// Sphere weight times the symmetrized cross section.
    bw: f64,
    ok: bool,
}

/// Largest difference table built; bigger grids always search.
const TABLE_LIMIT: usize = 1 << 24;

/// On-the-fly enumeration of the collisions of a grid.
#[derive(Debug, Clone)]
pub struct CollisionKernel {
    d: usize,
    n: i64,
    h: f64,
    idx: Vec<i64>,
    weights: Vec<f64>,
    sigma: Vec<f64>,
    sigma_w: Vec<f64>,
    half: usize,
    b: CrossSection,
    table: Vec<Offsets>,
}

impl CollisionKernel {
    pub fn new(grid: &VelocityGrid, sphere: &SphereQuadrature, b: &CrossSection) -> Result<Self> {
        if grid.d != sphere.d {
            return Err(Error::Structural(format!(
                "velocity grid has d = {} but the sphere rule has d = {}",
                grid.d, sphere.d
            )));
        }
        if grid.d > 10 {
            return Err(Error::Config("collision kernel supports d <= 10".into()));
        }
        let d = grid.d;
        let mut idx = vec![0i64; grid.len() * d];
        let mut mi = vec![0usize; d];
        for k in 0..grid.len() {
            grid.multi_index(k, &mut mi);
            for a in 0..d {
                idx[k * d + a] = mi[a] as i64;
            }
        }
        let mut k = Self {
            d,
            n: grid.n_per_axis as i64,
            h: grid.h,
            idx,
            weights: grid.weights.clone(),
            sigma: sphere.nodes[..sphere.half * d].to_vec(),
            sigma_w: sphere.weights[..sphere.half].to_vec(),
            half: sphere.half,
            b: b.clone(),
            table: Vec::new(),
        };
        k.build_table();
        Ok(k)
    }

    fn build_table(&mut self) {
        let d = self.d;
        let span = (2 * self.n - 1) as usize;
        let Some(classes) = span
            .checked_pow(d as u32)
            .filter(|&c| c * self.half <= TABLE_LIMIT)
        else {
            return;
        };
        if self.n > i16::MAX as i64 / 2 {
            return;
        }
        let mut table = Vec::with_capacity(classes * self.half);
        let mut diff = [0i64; 10];
        let mut par = [0i64; 10];
        let mut xi = [0.0f64; 10];
        for c in 0..classes {
            let mut rem = c;
            for a in (0..d).rev() {
                diff[a] = (rem % span) as i64 - (self.n - 1);
                rem /= span;
                par[a] = diff[a].rem_euclid(2);
            }
            let m0: i64 = diff[..d].iter().map(|x| x * x).sum();
            let norm = (m0 as f64).sqrt();
            for k in 0..self.half {
                let mut e = Offsets {
                    lam: [0; 10],
                    mu: [0; 10],
                    r: 0.0,
                    bw: 0.0,
                    ok: false,
                };
                if m0 > 0 {
                    let sig = &self.sigma[k * d..(k + 1) * d];
                    let mut cos = 0.0;
                    for a in 0..d {
                        xi[a] = 0.5 * par[a] as f64 + 0.5 * norm * sig[a];
                        cos += sig[a] * diff[a] as f64 / norm;
                    }
                    let (mut l, mut m) = self.search(&par[..d], m0, &xi[..d], false);
                    if l.is_none() || m.is_none() {
                        (l, m) = self.search(&par[..d], m0, &xi[..d], true);
                    }
                    if let (Some(l), Some(mut m)) = (l, m) {
                        e.r = if l.m == m0 {
                            m = l;
                            0.0
                        } else {
                            (m0 - l.m) as f64 / (m.m - l.m) as f64
                        };
                        for a in 0..d {
                            e.lam[a] = l.at[a] as i16;
                            e.mu[a] = m.at[a] as i16;
                        }
                        let g = self.h * norm;
                        e.bw = self.sigma_w[k] * 0.5 * (self.b.eval(g, cos) + self.b.eval(g, -cos));
                        e.ok = true;
                    }
                }
                table.push(e);
            }
        }
        self.table = table;
    }

    fn n_pairs(&self) -> usize {
        let n = self.weights.len();
        n * n.saturating_sub(1) / 2
    }

    /// Row `i` of the strict upper triangle holding linear pair index `p`.
    fn decode(&self, p: usize) -> (usize, usize) {
        let n = self.weights.len();
        let start = |i: usize| i * n - i * (i + 1) / 2;
        let b = 2.0 * n as f64 - 1.0;
        let mut i = ((b - (b * b - 8.0 * p as f64).max(0.0).sqrt()) / 2.0).floor() as usize;
        i = i.min(n.saturating_sub(2));
        while i > 0 && start(i) > p {
            i -= 1;
        }
        while i + 1 < n - 1 && start(i + 1) <= p {
            i += 1;
        }
        (i, i + 1 + (p - start(i)))
    }

    fn flat(&self, idx: &[i64]) -> Option<usize> {
        let mut k = 0usize;
        for &i in idx {
            if i < 0 || i >= self.n {
                return None;
            }
            k = k * self.n as usize + i as usize;
        }
        Some(k)
    }

    /// Best energy-bracketing pair among the per-axis candidate values.
    fn search(
        &self,
        s: &[i64],
        m0: i64,
        xi: &[f64],
        wide: bool,
    ) -> (Option<Candidate>, Option<Candidate>) {
        let d = self.d;
        let mut lists = [[0i64; 4]; 10];
        let mut lens = [0usize; 10];
        for a in 0..d {
            let lo = xi[a].floor() as i64;
            let hi = xi[a].ceil() as i64;
            let (from, to) = if wide { (lo - 1, hi + 1) } else { (lo, hi) };
            for v in from..=to {
                lists[a][lens[a]] = v;
                lens[a] += 1;
            }
        }
        let mut lam: Option<Candidate> = None;
        let mut mu: Option<Candidate> = None;
        let mut ctr = [0usize; 10];
        let mut cand = [0i64; 10];
        'outer: loop {
            let mut m = 0i64;
            let mut dist = 0.0;
            for a in 0..d {
                cand[a] = lists[a][ctr[a]];
                let t = 2 * cand[a] - s[a];
                m += t * t;
                let e = cand[a] as f64 - xi[a];
                dist += e * e;
            }
            let c = Candidate {
                m,
                dist,
                flat: 0,
                partner: 0,
                at: cand,
            };
            if m <= m0 {
                let better = match lam {
                    None => true,
                    Some(b) => m > b.m || (m == b.m && dist < b.dist),
                };
                if better {
                    lam = Some(c);
                }
            }
            if m >= m0 {
                let better = match mu {
                    None => true,
                    Some(b) => m < b.m || (m == b.m && dist < b.dist),
                };
                if better {
                    mu = Some(c);
                }
            }
            for a in (0..d).rev() {
                ctr[a] += 1;
                if ctr[a] < lens[a] {
                    continue 'outer;
                }
                ctr[a] = 0;
            }
            break;
        }
        (lam, mu)
    }

    /// Stencil for the pair `(i, j)` and upper-hemisphere node `k`, read from
    /// the difference table.
    fn triple(&self, i: usize, j: usize, k: usize) -> Option<Triple> {
        if self.table.is_empty() {
            return self.triple_search(i, j, k);
        }
        let d = self.d;
        let (ii, jj) = (&self.idx[i * d..(i + 1) * d], &self.idx[j * d..(j + 1) * d]);
        let span = 2 * self.n - 1;
        let mut key = 0i64;
        for a in 0..d {
            key = key * span + (ii[a] - jj[a] + self.n - 1);
        }
        let e = &self.table[key as usize * self.half + k];
        if !e.ok {
            return None;
        }
        let n = self.n as usize;
        let (mut fl, mut fls, mut fm, mut fms) = (0usize, 0usize, 0usize, 0usize);
        for a in 0..d {
            let s = ii[a] + jj[a];
            let q = s >> 1;
            let l = q + e.lam[a] as i64;
            let m = q + e.mu[a] as i64;
            let (ls, ms) = (s - l, s - m);
            if l < 0
                || l >= self.n
                || ls < 0
                || ls >= self.n
                || m < 0
                || m >= self.n
                || ms < 0
                || ms >= self.n
            {
                return None;
            }
            fl = fl * n + l as usize;
            fls = fls * n + ls as usize;
            fm = fm * n + m as usize;
            fms = fms * n + ms as usize;
        }
        let identity = |a: usize, b: usize| (a == i && b == j) || (a == j && b == i);
        if identity(fl, fls) && (e.r == 0.0 || identity(fm, fms)) {
            return None;
        }
        let w = self.weights[i] * self.weights[j] * e.bw;
        if w == 0.0 {
            return None;
        }
        Some(Triple {
            nodes: [
                i as u32, j as u32, fl as u32, fls as u32, fm as u32, fms as u32,
            ],
            r: e.r,
            w,
        })
    }

    /// Direct search. Collisions whose bracketing pairs leave the grid are
    /// dropped, which keeps every retained triple exactly conservative.
    fn triple_search(&self, i: usize, j: usize, k: usize) -> Option<Triple> {
        let d = self.d;
        let (ii, jj) = (&self.idx[i * d..(i + 1) * d], &self.idx[j * d..(j + 1) * d]);
        let mut s = [0i64; 10];
        let mut m0 = 0i64;
        for a in 0..d {
            s[a] = ii[a] + jj[a];
            let t = ii[a] - jj[a];
            m0 += t * t;
        }
        if m0 == 0 {
            return None;
        }
        let norm = (m0 as f64).sqrt();
        let sig = &self.sigma[k * d..(k + 1) * d];
        // Search around floor(S/2) so the choice is translation invariant.
        let mut par = [0i64; 10];
        let mut xi = [0.0f64; 10];
        let mut cos = 0.0;
        for a in 0..d {
            par[a] = s[a].rem_euclid(2);
            xi[a] = 0.5 * par[a] as f64 + 0.5 * norm * sig[a];
            cos += sig[a] * (ii[a] - jj[a]) as f64 / norm;
        }
        let (mut lam, mut mu) = self.search(&par[..d], m0, &xi[..d], false);
        if lam.is_none() || mu.is_none() {
            (lam, mu) = self.search(&par[..d], m0, &xi[..d], true);
        }
        let (mut lam, mut mu) = (lam?, mu?);
        for c in [&mut lam, &mut mu] {
            for a in 0..d {
                c.at[a] += s[a] >> 1;
            }
        }
        let r = if lam.m == m0 {
            mu = lam;
            0.0
        } else {
            (m0 - lam.m) as f64 / (mu.m - lam.m) as f64
        };
        for c in [&mut lam, &mut mu] {
            let mut part = [0i64; 10];
            for a in 0..d {
                part[a] = s[a] - c.at[a];
            }
            c.flat = self.flat(&c.at[..d])?;
            c.partner = self.flat(&part[..d])?;
        }
        let identity =
            |c: &Candidate| (c.flat == i && c.partner == j) || (c.flat == j && c.partner == i);
        if identity(&lam) && (r == 0.0 || identity(&mu)) {
            return None;
        }
        let g = self.h * norm;
        let bbar = 0.5 * (self.b.eval(g, cos) + self.b.eval(g, -cos));
        let w = self.weights[i] * self.weights[j] * self.sigma_w[k] * bbar;
        if w == 0.0 {
            return None;
        }
        Some(Triple {
            nodes: [
                i as u32,
                j as u32,
                lam.flat as u32,
                lam.partner as u32,
                mu.flat as u32,
                mu.partner as u32,
            ],
            r,
            w,
        })
    }

    /// Precompute every triple. Memory is about 40 bytes per triple.
    pub fn build_cache(&self, exec: Exec) -> CollisionKernelCache {
        let units = self.units();
        let chunks = par::chunk_count(units, self.min_chunk());
        let parts = par::map(exec, chunks, |c| {
            let (lo, hi) = par::chunk_bounds(units, chunks, c);
            let mut v = Vec::new();
            self.visit(lo, hi, |t| v.push(*t));
            v
        });
        let len = parts.iter().map(Vec::len).sum();
        let mut nodes = Vec::with_capacity(len);
        let mut r = Vec::with_capacity(len);
        let mut w = Vec::with_capacity(len);
        for t in parts.into_iter().flatten() {
            nodes.push(t.nodes);
            r.push(t.r);
            w.push(t.w);
        }
        CollisionKernelCache {
            weights: self.weights.clone(),
            nodes,
            r,
            w,
        }
    }
}

impl TripleSource for CollisionKernel {
    fn n_nodes(&self) -> usize {
        self.weights.len()
    }

    fn node_weights(&self) -> &[f64] {
        &self.weights
    }

    fn units(&self) -> usize {
        self.n_pairs()
    }

    fn min_chunk(&self) -> usize {
        4096
    }

    fn visit<F: FnMut(&Triple)>(&self, lo: usize, hi: usize, mut sink: F) {
        if lo >= hi {
            return;
        }
        let n = self.weights.len();
        let (mut i, mut j) = self.decode(lo);
        for _ in lo..hi {
            for k in 0..self.half {
                if let Some(t) = self.triple(i, j, k) {
                    sink(&t);
                }
            }
            j += 1;
            if j == n {
                i += 1;
                j = i + 1;
            }
        }
    }
}

/// Precomputed collision stencils, immutable after construction.
#[derive(Debug, Clone)]
pub struct CollisionKernelCache {
    weights: Vec<f64>,
    pub nodes: Vec<[u32; 6]>,
    pub r: Vec<f64>,
    pub w: Vec<f64>,
}

impl CollisionKernelCache {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn triple(&self, t: usize) -> Triple {
        Triple {
            nodes: self.nodes[t],
            r: self.r[t],
            w: self.w[t],
        }
    }
}

impl TripleSource for CollisionKernelCache {
    fn n_nodes(&self) -> usize {
        self.weights.len()
    }

    fn node_weights(&self) -> &[f64] {
        &self.weights
    }

    fn units(&self) -> usize {
        self.w.len()
    }

    fn min_chunk(&self) -> usize {
        1 << 15
    }

    fn visit<F: FnMut(&Triple)>(&self, lo: usize, hi: usize, mut sink: F) {
        for t in lo..hi {
            sink(&self.triple(t));
        }
    }
}

/// Per-node quantities reused by every triple.
struct Prepared {
    f: Vec<f64>,
    /// `1 - delta f` (1 for classical statistics).
    pb: Vec<f64>,
    /// Log-odds of `delta f` (or `log f`).
    lo: Vec<f64>,
    stats: Statistics,
}

impl Prepared {
    fn new(f: &[f64], stats: Statistics) -> Result<Self> {
        match stats {
            Statistics::FermiDirac { delta } => {
                if !(delta > 0.0) {
                    return Err(Error::Domain("delta must be positive".into()));
                }
                Ok(Self {
                    f: f.to_vec(),
                    pb: f.iter().map(|&x| 1.0 - delta * x).collect(),
                    lo: f.iter().map(|&x| log_odds(delta * x)).collect(),
                    stats,
                })
            }
            Statistics::Classical => Ok(Self {
                f: f.to_vec(),
                pb: vec![1.0; f.len()],
                lo: f
                    .iter()
                    .map(|&x| {
                        if x > 0.0 {
                            x.ln().max(-LOGIT_MAX)
                        } else {
                            -LOGIT_MAX
                        }
                    })
                    .collect(),
                stats,
            }),
        }
    }

    /// Interpolated post-collisional log-odds of the two outgoing particles.
    #[inline]
    fn post(&self, t: &Triple) -> (f64, f64) {
        let n = t.nodes.map(|k| k as usize);
        let a = (1.0 - t.r) * self.lo[n[2]] + t.r * self.lo[n[4]];
        let b = (1.0 - t.r) * self.lo[n[3]] + t.r * self.lo[n[5]];
        (a, b)
    }

    /// Gain and loss products `(G', G)` and the log ratio.
    #[inline]
    fn products(&self, t: &Triple) -> (f64, f64, f64) {
        let (i, j) = (t.nodes[0] as usize, t.nodes[1] as usize);
        let (la, lb) = self.post(t);
        let x = la + lb - self.lo[i] - self.lo[j];
        match self.stats {
            Statistics::FermiDirac { delta } => {
                let gain = fermi(-la) * fermi(-lb) * self.pb[i] * self.pb[j] / (delta * delta);
                let loss = self.f[i] * self.f[j] * fermi(la) * fermi(lb);
                (gain, loss, x)
            }
            Statistics::Classical => ((la + lb).exp(), self.f[i] * self.f[j], x),
        }
    }
}

fn check_len<S: TripleSource>(src: &S, f: &[f64]) -> Result<()> {
    if f.len() != src.n_nodes() {
        return Err(Error::Structural(format!(
            "field has {} velocity values, collision kernel expects {}",
            f.len(),
            src.n_nodes()
        )));
    }
    Ok(())
}

/// `Q(f)` at every node together with the entropy dissipation `D(f)`.
#[derive(Debug, Clone)]
pub struct CollisionOutput {
    pub q: Vec<f64>,
    pub dissipation: f64,
}

fn apply_impl<S: TripleSource>(
    src: &S,
    f: &[f64],
    stats: Statistics,
    exec: Exec,
    want_d: bool,
) -> Result<CollisionOutput> {
    check_len(src, f)?;
    let p = Prepared::new(f, stats)?;
    let n = src.n_nodes();
    let mut acc = par::scatter(exec, src.units(), n + 1, src.min_chunk(), |lo, hi, buf| {
        let mut dsum = 0.0;
        src.visit(lo, hi, |t| {
            let (gain, loss, x) = p.products(t);
            let delta = t.w * (gain - loss);
            if delta == 0.0 {
                return;
            }
            let k = t.nodes.map(|k| k as usize);
            buf[k[0]] += delta;
            buf[k[1]] += delta;
            let a = (1.0 - t.r) * delta;
            buf[k[2]] -= a;
            buf[k[3]] -= a;
            if t.r != 0.0 {
                let b = t.r * delta;
                buf[k[4]] -= b;
                buf[k[5]] -= b;
            }
            if want_d && gain > 0.0 && loss > 0.0 {
                dsum += delta * x;
            }
        });
        buf[n] += dsum;
    });
    let d_raw = acc.pop().unwrap_or(0.0);
    for (q, w) in acc.iter_mut().zip(src.node_weights()) {
        *q /= w;
    }
    let dissipation = match stats {
        Statistics::FermiDirac { delta } => delta * d_raw,
        Statistics::Classical => d_raw,
    };
    Ok(CollisionOutput {
        q: acc,
        dissipation,
    })
}

/// `Q_FD(f)` at every velocity node.
pub fn qfd_apply<S: TripleSource>(
    src: &S,
    f: &[f64],
    stats: Statistics,
    exec: Exec,
) -> Result<Vec<f64>> {
    Ok(apply_impl(src, f, stats, exec, false)?.q)
}

/// `Q_FD(f)` and `D(f)` in one pass.
pub fn qfd_apply_with_dissipation<S: TripleSource>(
    src: &S,
    f: &[f64],
    stats: Statistics,
    exec: Exec,
) -> Result<CollisionOutput> {
    apply_impl(src, f, stats, exec, true)
}

/// Entropy dissipation `D(f)` alone.
pub fn entropy_dissipation<S: TripleSource>(
    src: &S,
    f: &[f64],
    stats: Statistics,
    exec: Exec,
) -> Result<f64> {
    check_len(src, f)?;
    let p = Prepared::new(f, stats)?;
    let raw = par_reduce(exec, src, |t| {
        let (gain, loss, x) = p.products(t);
        if gain > 0.0 && loss > 0.0 {
            t.w * (gain - loss) * x
        } else {
            0.0
        }
    });
    Ok(match stats {
        Statistics::FermiDirac { delta } => delta * raw,
        Statistics::Classical => raw,
    })
}

fn par_reduce<S: TripleSource, F: Fn(&Triple) -> f64 + Sync>(exec: Exec, src: &S, f: F) -> f64 {
    let units = src.units();
    let chunks = par::chunk_count(units, src.min_chunk());
    par::map(exec, chunks, |c| {
        let (lo, hi) = par::chunk_bounds(units, chunks, c);
        let mut s = 0.0;
        src.visit(lo, hi, |t| s += f(t));
        s
    })
    .iter()
    .sum()
}

fn par_max<S: TripleSource, F: Fn(&Triple) -> f64 + Sync>(exec: Exec, src: &S, f: F) -> f64 {
    let units = src.units();
    let chunks = par::chunk_count(units, src.min_chunk());
    par::map(exec, chunks, |c| {
        let (lo, hi) = par::chunk_bounds(units, chunks, c);
        let mut m = 0.0f64;
        src.visit(lo, hi, |t| m = m.max(f(t)));
        m
    })
    .into_iter()
    .fold(0.0, f64::max)
}

/// Grid quadrature of `Qf * phi`.
pub fn weak_moment<P: Fn(&[f64]) -> f64>(grid: &VelocityGrid, qf: &[f64], phi: P) -> f64 {
    (0..grid.len())
        .map(|k| grid.weights[k] * qf[k] * phi(grid.node(k)))
        .sum()
}

/// The weak form written directly over collisions:
/// `sum_t w (G' - G)(phi + phi_* - phi' - phi_*')` with the stencil average
/// standing in for the post-collisional values.
pub fn weak_form_by_collisions<S: TripleSource>(
    src: &S,
    f: &[f64],
    stats: Statistics,
    phi: &[f64],
    exec: Exec,
) -> Result<f64> {
    check_len(src, f)?;
    check_len(src, phi)?;
    let p = Prepared::new(f, stats)?;
    Ok(par_reduce(exec, src, |t| {
        let (gain, loss, _) = p.products(t);
        let k = t.nodes.map(|k| k as usize);
        let post = (1.0 - t.r) * (phi[k[2]] + phi[k[3]]) + t.r * (phi[k[4]] + phi[k[5]]);
        t.w * (gain - loss) * (phi[k[0]] + phi[k[1]] - post)
    }))
}

/// Largest `|G' - G|` over all collisions.
pub fn equilibrium_residual<S: TripleSource>(
    src: &S,
    f: &[f64],
    stats: Statistics,
    exec: Exec,
) -> Result<f64> {
    check_len(src, f)?;
    let p = Prepared::new(f, stats)?;
    Ok(par_max(exec, src, |t| {
        let (gain, loss, _) = p.products(t);
        (gain - loss).abs()
    }))
}

/// Scaling of the renormalized collision integrand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrandScaling {
    pub delta: f64,
    pub eps: f64,
    pub kappa: f64,
    pub gamma: f64,
}

impl IntegrandScaling {
    fn prefactor(&self) -> f64 {
        1.0 / (self.delta.sqrt() * self.eps.powf(1.0 + 0.5 * (self.kappa - self.gamma)))
    }
}

/// `q = delta^{-1/2} eps^{-1-(kappa-gamma)/2} (sqrt(gain) - sqrt(loss))` from
/// the four occupations `f, f_*, f', f_*'`.
pub fn renormalized_integrand(
    f: f64,
    f_star: f64,
    f_p: f64,
    f_sp: f64,
    s: IntegrandScaling,
) -> f64 {
    let z = |x: f64| (s.delta * x).clamp(0.0, 1.0);
    let (a, b, c, e) = (z(f), z(f_star), z(f_p), z(f_sp));
    let gain = c * e * (1.0 - a) * (1.0 - b);
    let loss = a * b * (1.0 - c) * (1.0 - e);
    s.prefactor() * (gain.sqrt() - loss.sqrt())
}

/// `||q||^2` in `L^2(b dv dv_* dsigma)` with the stencil-interpolated
/// post-collisional occupations.
pub fn renormalized_l2<S: TripleSource>(
    src: &S,
    f: &[f64],
    s: IntegrandScaling,
    exec: Exec,
) -> Result<f64> {
    check_len(src, f)?;
    let p = Prepared::new(f, Statistics::FermiDirac { delta: s.delta })?;
    let pre = s.prefactor();
    let raw = par_reduce(exec, src, |t| {
        let (i, j) = (t.nodes[0] as usize, t.nodes[1] as usize);
        let (la, lb) = p.post(t);
        let (zi, zj) = (s.delta * p.f[i], s.delta * p.f[j]);
        let gain = fermi(-la) * fermi(-lb) * p.pb[i] * p.pb[j];
        let loss = zi * zj * fermi(la) * fermi(lb);
        let q = pre * (gain.max(0.0).sqrt() - loss.max(0.0).sqrt());
        t.w * q * q
    });
    // each stored collision stands for four ordered ones
    Ok(4.0 * raw)
}

/// Reference evaluation by a plain loop over ordered pairs and the whole
/// sphere rule: no cache, no difference table, no symmetry reduction and no
/// parallelism. Each stencil is searched afresh and the unsymmetrized cross
/// section is evaluated at the actual scattering angle.
pub fn naive_qfd(
    grid: &VelocityGrid,
    sphere: &SphereQuadrature,
    b: &CrossSection,
    f: &[f64],
    stats: Statistics,
) -> Result<CollisionOutput> {
    let mut kernel = CollisionKernel::new(grid, sphere, b)?;
    kernel.table.clear();
    check_len(&kernel, f)?;
    let p = Prepared::new(f, stats)?;
    let n = grid.len();
    let d = grid.d;
    let mut acc = vec![0.0; n];
    let mut dsum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (vi, vj) = (grid.node(i), grid.node(j));
            let g = vi.iter().zip(vj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            for k in 0..sphere.len() {
                let (ku, flip) = if k < sphere.half {
                    (k, false)
                } else {
                    (k - sphere.half, true)
                };
                let Some(mut t) = kernel.triple_search(i.min(j), i.max(j), ku) else {
                    continue;
                };
                // the antipodal direction swaps the outgoing partners
                if flip {
                    t.nodes.swap(2, 3);
                    t.nodes.swap(4, 5);
                }
                t.nodes[0] = i as u32;
                t.nodes[1] = j as u32;
                let sig = sphere.node(k);
                let cos = (0..d).map(|a| sig[a] * (vi[a] - vj[a])).sum::<f64>() / g;
                t.w = 0.25 * grid.weights[i] * grid.weights[j] * sphere.weights[k] * b.eval(g, cos);
                let (gain, loss, x) = p.products(&t);
                let delta = t.w * (gain - loss);
                let m = t.nodes.map(|k| k as usize);
                acc[m[0]] += delta;
                acc[m[1]] += delta;
                acc[m[2]] -= (1.0 - t.r) * delta;
                acc[m[3]] -= (1.0 - t.r) * delta;
                acc[m[4]] -= t.r * delta;
                acc[m[5]] -= t.r * delta;
                if gain > 0.0 && loss > 0.0 {
                    dsum += delta * x;
                }
            }
        }
    }
    for (q, w) in acc.iter_mut().zip(&grid.weights) {
        *q /= w;
    }
    Ok(CollisionOutput {
        q: acc,
        dissipation: match stats {
            Statistics::FermiDirac { delta } => delta * dsum,
            Statistics::Classical => dsum,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::{fermi_dirac, FermiDiracParams};
    use crate::phase_space::sphere_quadrature;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, v_max: f64) -> (VelocityGrid, CollisionKernel) {
        let g = VelocityGrid::new(3, n, v_max).unwrap();
        let s = sphere_quadrature(3, 2).unwrap();
        let k = CollisionKernel::new(&g, &s, &CrossSection::constant(1.0).unwrap()).unwrap();
        (g, k)
    }

    #[test]
    fn kinematics_examples() {
        let (a, b) =
            post_collision_velocities(&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        assert_eq!(a, vec![0.0, 1.0, 0.0]);
        assert_eq!(b, vec![0.0, -1.0, 0.0]);
        let (a, b) =
            post_collision_velocities(&[0.3, 0.2, 0.1], &[0.3, 0.2, 0.1], &[0.0, 0.0, 1.0]);
        assert_eq!(a, b);
        let v = [0.5, -0.2, 0.9];
        let vs = [-0.1, 0.4, 0.3];
        let g: Vec<f64> = v.iter().zip(&vs).map(|(x, y)| x - y).collect();
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let sig: Vec<f64> = g.iter().map(|x| x / n).collect();
        let (a, b) = post_collision_velocities(&v, &vs, &sig);
        for k in 0..3 {
            assert!((a[k] - v[k]).abs() < 1e-15 && (b[k] - vs[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn pair_decoding_is_exhaustive() {
        let (_, k) = setup(3, 1.0);
        let n = k.n_nodes();
        let mut p = 0;
        for i in 0..n {
            for j in i + 1..n {
                assert_eq!(k.decode(p), (i, j));
                p += 1;
            }
        }
    }

    #[test]
    fn stencils_conserve_momentum_and_bracket_energy() {
        let (g, k) = setup(5, 2.0);
        let cache = k.build_cache(Exec::Sequential);
        assert!(!cache.is_empty());
        for t in 0..cache.len() {
            let tr = cache.triple(t);
            let v = |m: u32| g.node(m as usize).to_vec();
            let e = |m: u32| g.speed2(m as usize);
            let [i, j, l, ls, m, ms] = tr.nodes;
            for a in 0..3 {
                let p0 = v(i)[a] + v(j)[a];
                assert!((v(l)[a] + v(ls)[a] - p0).abs() < 1e-12);
                assert!((v(m)[a] + v(ms)[a] - p0).abs() < 1e-12);
            }
            let e0 = e(i) + e(j);
            let el = e(l) + e(ls);
            let em = e(m) + e(ms);
            assert!(el <= e0 + 1e-12 && em >= e0 - 1e-12);
            let mixed = (1.0 - tr.r) * el + tr.r * em;
            assert!((mixed - e0).abs() < 1e-12 * e0.max(1.0));
            assert!((0.0..1.0).contains(&tr.r));
        }
    }

    #[test]
    fn saturation_and_vacuum_give_zero() {
        let (_, k) = setup(4, 2.0);
        let c = k.build_cache(Exec::Sequential);
        let st = Statistics::FermiDirac { delta: 2.0 };
        for val in [0.0, 0.5] {
            let q = qfd_apply(&c, &vec![val; c.n_nodes()], st, Exec::Sequential).unwrap();
            assert!(q.iter().all(|&x| x == 0.0));
        }
        assert!(qfd_apply(&c, &[0.1; 3], st, Exec::Sequential).is_err());
    }

    #[test]
    fn difference_table_matches_direct_search() {
        let (g, k) = setup(6, 1.5);
        let mut hits = 0;
        for i in 0..g.len() {
            for j in 0..g.len() {
                for s in 0..k.half {
                    let (a, b) = (k.triple(i, j, s), k.triple_search(i, j, s));
                    match (a, b) {
                        (None, None) => {}
                        (Some(a), Some(b)) => {
                            assert_eq!(a.nodes, b.nodes);
                            assert_eq!(a.r, b.r);
                            assert!((a.w - b.w).abs() <= 1e-15 * b.w);
                            hits += 1;
                        }
                        _ => panic!("table and search disagree at ({i}, {j}, {s})"),
                    }
                }
            }
        }
        assert!(hits > 1000);
    }

    #[test]
    fn fermi_dirac_is_annihilated_and_cache_matches_streaming() {
        let (g, k) = setup(6, 2.0);
        let c = k.build_cache(Exec::Parallel);
        let p = FermiDiracParams {
            u: vec![0.1, -0.05, 0.2],
            t: 0.4,
            mu: 1.0,
            delta: 1.0,
        };
        let f: Vec<f64> = (0..g.len())
            .map(|m| fermi_dirac(g.node(m), &p).unwrap())
            .collect();
        let st = Statistics::FermiDirac { delta: 1.0 };
        let q = qfd_apply(&c, &f, st, Exec::Sequential).unwrap();
        assert!(
            q.iter().all(|x| x.abs() < 1e-12),
            "{:?}",
            q.iter().fold(0.0f64, |a, b| a.max(b.abs()))
        );
        assert!(equilibrium_residual(&c, &f, st, Exec::Sequential).unwrap() < 1e-13);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f: Vec<f64> = (0..g.len()).map(|_| rng.random::<f64>()).collect();
        let a = qfd_apply_with_dissipation(&c, &f, st, Exec::Sequential).unwrap();
        let b = qfd_apply_with_dissipation(&k, &f, st, Exec::Parallel).unwrap();
        for (x, y) in a.q.iter().zip(&b.q) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
        assert!(a.dissipation > 0.0);
        let d = entropy_dissipation(&c, &f, st, Exec::Parallel).unwrap();
        assert!((d - a.dissipation).abs() < 1e-12 * d);
        assert!(equilibrium_residual(&c, &f, st, Exec::Sequential).unwrap() > 1e-3);
    }

    #[test]
    fn table_round_trip() {
        let t = Table::parse("# b table\n2 3\n0 4\n-1 0 1\n1 0.5 1\n0.2 0.2 0.2\n").unwrap();
        let b = CrossSection::tabulated(t, 2.0).unwrap();
        assert_eq!(b.eval(0.0, -1.0), 2.0);
        assert!((b.eval(0.0, -0.5) - 1.5).abs() < 1e-15);
        assert!((b.eval(2.0, 0.0) - 0.7).abs() < 1e-15);
        assert!((b.eval(10.0, 0.3) - 0.4).abs() < 1e-15);
        assert!(b.check_positive_on(2.0).is_ok());
        let bad = Table::parse("1 2\n0\n-1 1\n0 1\n").unwrap();
        assert!(CrossSection::tabulated(bad, 1.0)
            .unwrap()
            .check_positive_on(2.0)
            .is_err());
        assert!(Table::parse("2 2\n0 1\n").is_err());
        assert!(Table::parse("1 1\n0\n0\n3\n").is_err());
    }

    #[test]
    fn renormalized_integrand_values() {
        let s = IntegrandScaling {
            delta: 1.0,
            eps: 0.1,
            kappa: 1.2,
            gamma: 0.5,
        };
        let q = renormalized_integrand(1.0, 0.3, 0.2, 0.9, s);
        assert!((q + s.prefactor() * (0.3f64 * 0.8 * 0.1).sqrt()).abs() < 1e-13 * q.abs());
        assert_eq!(renormalized_integrand(1.0, 1.0, 1.0, 1.0, s), 0.0);
    }
}
