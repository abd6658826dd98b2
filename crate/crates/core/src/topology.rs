//! Network geometry, large-scale fading, AP clustering and pilot assignment.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::TopologyError;

/// Upper bound on uniform draws spent by dart throwing.
pub const MAX_PLACEMENT_DRAWS: usize = 1_000_000;
/// Consecutive rejections after which dart throwing is considered jammed.
const STALL_REJECTIONS: usize = 20_000;
/// Relocation sweeps of the hard-core sampler (one sweep = one proposal per AP).
const RELOCATION_SWEEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

fn uniform_point<R: Rng + ?Sized>(rng: &mut R, side: f64) -> Point {
    Point::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side))
}

fn clear_of(points: &[Point], candidate: &Point, d_min: f64, skip: Option<usize>) -> bool {
    points
        .iter()
        .enumerate()
        .all(|(i, p)| Some(i) == skip || p.distance(candidate) >= d_min)
}

/// Places `num_aps` points in the square `[0, side)^2` with pairwise
/// distance at least `d_min`.
///
/// Dart throwing is tried first. If it jams before all points are placed,
/// the hard-core process is sampled instead: a random subset of a
/// hexagonal lattice with spacing `d_min` gives a valid start, then
/// Metropolis relocation moves (uniform proposal, accepted only when the
/// hard core holds) randomize it.
pub fn place_aps_hcpp<R: Rng + ?Sized>(
    rng: &mut R,
    num_aps: usize,
    side: f64,
    d_min: f64,
) -> Result<Vec<Point>, TopologyError> {
    let mut points: Vec<Point> = Vec::with_capacity(num_aps);
    let mut draws = 0usize;
    let mut rejections = 0usize;
    while points.len() < num_aps && draws < MAX_PLACEMENT_DRAWS && rejections < STALL_REJECTIONS {
        let candidate = uniform_point(rng, side);
        draws += 1;
        if clear_of(&points, &candidate, d_min, None) {
            points.push(candidate);
            rejections = 0;
        } else {
            rejections += 1;
        }
    }
    if points.len() == num_aps {
        return Ok(points);
    }

    let jammed_at = points.len();
    let mut points = lattice_start(rng, num_aps, side, d_min).ok_or(TopologyError::PlacementFailed {
        wanted: num_aps,
        placed: jammed_at,
        d_min,
    })?;
    for _ in 0..RELOCATION_SWEEPS * num_aps {
        let i = rng.gen_range(0..num_aps);
        let candidate = uniform_point(rng, side);
        if clear_of(&points, &candidate, d_min, Some(i)) {
            points[i] = candidate;
        }
    }
    Ok(points)
}

fn hex_lattice(side: f64, spacing: f64, offset: (f64, f64)) -> Vec<Point> {
    let row_height = spacing * 3f64.sqrt() / 2.0;
    let mut sites = Vec::new();
    let mut row = 0usize;
    loop {
        let y = offset.1 + row as f64 * row_height;
        if y >= side {
            break;
        }
        let shift = if row % 2 == 1 { spacing / 2.0 } else { 0.0 };
        let mut col = 0usize;
        loop {
            let x = offset.0 + shift + col as f64 * spacing;
            if x >= side {
                break;
            }
            sites.push(Point::new(x, y));
            col += 1;
        }
        row += 1;
    }
    sites
}

fn lattice_start<R: Rng + ?Sized>(rng: &mut R, n: usize, side: f64, d_min: f64) -> Option<Vec<Point>> {
    // Slightly widened so rounding never breaks the hard core.
    let spacing = d_min * (1.0 + 1e-9);
    let offset = (rng.gen_range(0.0..spacing), rng.gen_range(0.0..spacing * 0.75));
    let mut sites = hex_lattice(side, spacing, offset);
    if sites.len() < n {
        sites = hex_lattice(side, spacing, (0.0, 0.0));
    }
    if sites.len() < n {
        return None;
    }
    let (chosen, _) = sites.partial_shuffle(rng, n);
    Some(chosen.to_vec())
}

pub fn place_ues_uniform<R: Rng + ?Sized>(rng: &mut R, num_ues: usize, side: f64) -> Vec<Point> {
    (0..num_ues).map(|_| uniform_point(rng, side)).collect()
}

/// Mean large-scale gain in dB at planar distance `d2_m` (no shadowing).
pub fn mean_gain_db(cfg: &SystemConfig, d2_m: f64) -> f64 {
    let dh = cfg.h_ap_m - cfg.h_ue_m;
    let d3 = d2_m.hypot(dh);
    cfg.pathloss_intercept_db - cfg.pathloss_slope * d3.log10()
}

/// Linear large-scale gains, K x L, with i.i.d. log-normal shadowing.
pub fn large_scale_fading<R: Rng + ?Sized>(
    rng: &mut R,
    ap_pos: &[Point],
    ue_pos: &[Point],
    cfg: &SystemConfig,
) -> DMatrix<f64> {
    let shadow = Normal::new(0.0, cfg.shadow_sigma_db).expect("non-negative deviation");
    let mut beta = DMatrix::zeros(ue_pos.len(), ap_pos.len());
    for (k, ue) in ue_pos.iter().enumerate() {
        for (l, ap) in ap_pos.iter().enumerate() {
            let f = if cfg.shadow_sigma_db > 0.0 { shadow.sample(rng) } else { 0.0 };
            let db = mean_gain_db(cfg, ue.distance(ap)) + f;
            beta[(k, l)] = 10f64.powf(db / 10.0);
        }
    }
    beta
}

/// Serving clusters: for each UE, its `cluster_size` strongest APs in
/// descending gain order. Position `m` in the list is the codeword row
/// assigned to that AP (`m(l, k) = position + 1`).
pub fn cluster_aps(beta: &DMatrix<f64>, cluster_size: usize) -> Result<Vec<Vec<usize>>, TopologyError> {
    let num_aps = beta.ncols();
    if cluster_size > num_aps {
        return Err(TopologyError::ClusterTooLarge {
            cluster_size,
            num_aps,
        });
    }
    Ok((0..beta.nrows())
        .map(|k| {
            let mut order: Vec<usize> = (0..num_aps).collect();
            // Stable sort keeps the lowest index first among equal gains.
            order.sort_by(|&a, &b| beta[(k, b)].total_cmp(&beta[(k, a)]));
            order.truncate(cluster_size);
            order
        })
        .collect())
}

/// Greedy pilot-group assignment.
///
/// UEs are visited in random order. The first `groups` UEs take distinct
/// groups; every later UE joins the group with the least accumulated gain
/// towards its strongest serving AP (lowest group index on ties).
pub fn assign_pilots<R: Rng + ?Sized>(
    rng: &mut R,
    beta: &DMatrix<f64>,
    clusters: &[Vec<usize>],
    groups: usize,
) -> Result<Vec<usize>, TopologyError> {
    if groups == 0 {
        return Err(TopologyError::NoPilots {
            tau_p: 0,
            ue_antennas: 0,
        });
    }
    let num_ues = beta.nrows();
    let mut order: Vec<usize> = (0..num_ues).collect();
    order.shuffle(rng);
    let mut assignment = vec![usize::MAX; num_ues];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); groups];
    for (visit, &k) in order.iter().enumerate() {
        let group = if visit < groups {
            visit
        } else {
            let anchor = clusters[k][0];
            let load = |g: usize| members[g].iter().map(|&i| beta[(i, anchor)]).sum::<f64>();
            let mut best = 0;
            let mut best_load = load(0);
            for g in 1..groups {
                let lg = load(g);
                if lg < best_load {
                    best = g;
                    best_load = lg;
                }
            }
            best
        };
        assignment[k] = group;
        members[group].push(k);
    }
    Ok(assignment)
}

/// Geometry, gains, clusters and pilots of one Monte Carlo setup.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRealization {
    pub ap_pos: Vec<Point>,
    pub ue_pos: Vec<Point>,
    /// Linear gains, K x L.
    pub beta: DMatrix<f64>,
    /// Serving APs per UE, strongest first.
    pub clusters: Vec<Vec<usize>>,
    /// UEs served by each AP, ascending UE index.
    pub served_by: Vec<Vec<usize>>,
    pub pilot_group: Vec<usize>,
}

impl NetworkRealization {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R, cfg: &SystemConfig) -> Result<Self, TopologyError> {
        let d_min = cfg.derive().d_min_m;
        let ap_pos = place_aps_hcpp(rng, cfg.num_aps, cfg.area_side_m, d_min)?;
        let ue_pos = place_ues_uniform(rng, cfg.num_ues, cfg.area_side_m);
        let beta = large_scale_fading(rng, &ap_pos, &ue_pos, cfg);
        Self::from_parts(rng, ap_pos, ue_pos, beta, cfg)
    }

    /// Builds clusters and pilots on top of given geometry and gains.
    pub fn from_parts<R: Rng + ?Sized>(
        rng: &mut R,
        ap_pos: Vec<Point>,
        ue_pos: Vec<Point>,
        beta: DMatrix<f64>,
        cfg: &SystemConfig,
    ) -> Result<Self, TopologyError> {
        let clusters = cluster_aps(&beta, cfg.cluster_size)?;
        if cfg.pilot_groups() == 0 {
            return Err(TopologyError::NoPilots {
                tau_p: cfg.tau_p,
                ue_antennas: cfg.ue_antennas,
            });
        }
        let pilot_group = assign_pilots(rng, &beta, &clusters, cfg.pilot_groups())?;
        let served_by = served_by(&clusters, beta.ncols());
        Ok(NetworkRealization {
            ap_pos,
            ue_pos,
            beta,
            clusters,
            served_by,
            pilot_group,
        })
    }

    pub fn num_ues(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_aps(&self) -> usize {
        self.beta.ncols()
    }

    /// Serving indicator `a_{k,l}`.
    pub fn serves(&self, k: usize, l: usize) -> bool {
        self.clusters[k].contains(&l)
    }

    /// Zero-based codeword row assigned to AP `l` for UE `k`.
    pub fn row_index(&self, k: usize, l: usize) -> Option<usize> {
        self.clusters[k].iter().position(|&x| x == l)
    }

    /// CSV dump with header `entity,id,x_m,y_m`.
    pub fn geometry_csv(&self) -> String {
        let mut out = String::from("entity,id,x_m,y_m\n");
        for (i, p) in self.ap_pos.iter().enumerate() {
            let _ = writeln!(out, "ap,{i},{},{}", p.x, p.y);
        }
        for (i, p) in self.ue_pos.iter().enumerate() {
            let _ = writeln!(out, "ue,{i},{},{}", p.x, p.y);
        }
        out
    }
}

pub fn served_by(clusters: &[Vec<usize>], num_aps: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); num_aps];
    for (k, cluster) in clusters.iter().enumerate() {
        for &l in cluster {
            out[l].push(k);
        }
    }
    out
}
