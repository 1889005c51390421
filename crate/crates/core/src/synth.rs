//! Synthetic view graphs and two-view scenes with known ground truth.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::so3::Rotation;
use crate::uncertainty::{
    CameraIntrinsics, Correspondence, PairRecord, PairsFile, TwoViewGeometry,
};
use crate::viewgraph::{EdgeMeasurement, NodeId, ViewGraph, ViewNode};

const CONNECT_RETRIES: usize = 100;

/// Covariance and inlier count attached to outlier edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutlierCovariance {
    /// Those of the smallest mixture σ: outliers look trustworthy.
    #[default]
    Confident,
    /// Drawn from the mixture like an inlier edge.
    Mixture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_cameras: usize,
    pub edge_density: f64,
    /// `(fraction, σ in degrees)` components of the noise mixture.
    pub noise_sigmas_deg: Vec<(f64, f64)>,
    pub outlier_fraction: f64,
    pub seed: u64,
    pub report_true_covariance: bool,
    pub outlier_covariance: OutlierCovariance,
    /// Inlier count of an edge at the smallest σ; scales as `(σ_min/σ)²`.
    pub base_inliers: f64,
    /// Log-normal spread of inlier counts around that trend.
    pub inlier_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_cameras: 50,
            edge_density: 0.25,
            noise_sigmas_deg: vec![(0.5, 0.5), (0.5, 5.0)],
            outlier_fraction: 0.1,
            seed: 0,
            report_true_covariance: true,
            outlier_covariance: OutlierCovariance::Confident,
            base_inliers: 1000.0,
            inlier_jitter: 0.75,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_cameras < 2 {
            return bad(format!("need at least 2 cameras, got {}", self.n_cameras));
        }
        if !(self.edge_density > 0.0 && self.edge_density <= 1.0) {
            return bad(format!(
                "edge density must lie in (0, 1], got {}",
                self.edge_density
            ));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return bad(format!(
                "outlier fraction must lie in [0, 1], got {}",
                self.outlier_fraction
            ));
        }
        if self.noise_sigmas_deg.is_empty() {
            return bad("noise mixture is empty".into());
        }
        for &(f, s) in &self.noise_sigmas_deg {
            if !(f > 0.0 && f.is_finite()) || !(s >= 0.0 && s.is_finite()) {
                return bad(format!("invalid mixture component ({f}, {s})"));
            }
        }
        let total: f64 = self.noise_sigmas_deg.iter().map(|c| c.0).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("mixture fractions sum to {total}, expected 1"));
        }
        if !(self.base_inliers >= 8.0) || !(self.inlier_jitter >= 0.0) {
            return bad("base inliers must be ≥ 8 and jitter non-negative".into());
        }
        Ok(())
    }

    /// Parses `"f:σ,f:σ,..."`.
    pub fn parse_mixture(text: &str) -> Result<Vec<(f64, f64)>> {
        text.split(',')
            .map(|part| {
                let (f, s) = part.split_once(':').ok_or_else(|| {
                    Error::InvalidArgument(format!("mixture component '{part}' is not f:sigma"))
                })?;
                let parse = |v: &str| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("bad number '{v}' in mixture")))
                };
                Ok((parse(f)?, parse(s)?))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub graph: ViewGraph,
    /// Indices into `graph.edges()`.
    pub outlier_edge_ids: Vec<usize>,
    /// Noise σ (radians) of every edge in edge order; outliers carry the σ
    /// their covariance reports.
    pub edge_sigmas: Vec<f64>,
}

fn sample_sigma<R: Rng>(rng: &mut R, mixture: &[(f64, f64)]) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(f, s) in mixture {
        acc += f;
        if u < acc {
            return s;
        }
    }
    mixture.last().unwrap().1
}

fn random_pairs<R: Rng>(rng: &mut R, n: usize, density: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

fn is_connected(n: usize, pairs: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in pairs {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Joins every component to its predecessor with one random edge.
fn connect<R: Rng>(rng: &mut R, n: usize, pairs: &mut Vec<(usize, usize)>) {
    let mut label: Vec<usize> = (0..n).collect();
    fn find(l: &mut [usize], mut x: usize) -> usize {
        while l[x] != x {
            l[x] = l[l[x]];
            x = l[x];
        }
        x
    }
    for &(i, j) in pairs.iter() {
        let (a, b) = (find(&mut label, i), find(&mut label, j));
        label[a.max(b)] = a.min(b);
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for v in 0..n {
        let root = find(&mut label, v);
        members[root].push(v);
    }
    let comps: Vec<Vec<usize>> = members.into_iter().filter(|m| !m.is_empty()).collect();
    for w in comps.windows(2) {
        let a = w[0][rng.random_range(0..w[0].len())];
        let b = w[1][rng.random_range(0..w[1].len())];
        pairs.push((a.min(b), a.max(b)));
    }
    pairs.sort_unstable();
}

/// Samples a connected synthetic view graph.
pub fn generate_graph(config: &SynthConfig) -> Result<SynthScene> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let n = config.n_cameras;
    let gt: Vec<Rotation> = (0..n).map(|_| Rotation::uniform(&mut rng)).collect();

    let mut pairs = random_pairs(&mut rng, n, config.edge_density);
    let mut attempts = 1;
    while !is_connected(n, &pairs) && attempts < CONNECT_RETRIES {
        pairs = random_pairs(&mut rng, n, config.edge_density);
        attempts += 1;
    }
    if !is_connected(n, &pairs) {
        log::warn!("graph still disconnected after {attempts} draws; adding bridging edges");
        connect(&mut rng, n, &mut pairs);
    }

    let n_outliers = (config.outlier_fraction * pairs.len() as f64).round() as usize;
    let mut outlier_ids = index::sample(&mut rng, pairs.len(), n_outliers).into_vec();
    outlier_ids.sort_unstable();
    let mut is_outlier = vec![false; pairs.len()];
    for &k in &outlier_ids {
        is_outlier[k] = true;
    }

    let to_rad = std::f64::consts::PI / 180.0;
    let sigma_min = config
        .noise_sigmas_deg
        .iter()
        .map(|c| c.1)
        .fold(f64::INFINITY, f64::min)
        * to_rad;
    let mut edges = Vec::with_capacity(pairs.len());
    let mut edge_sigmas = Vec::with_capacity(pairs.len());
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let mixture_sigma = sample_sigma(&mut rng, &config.noise_sigmas_deg) * to_rad;
        let eps = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let z: f64 = rng.sample(StandardNormal);
        let truth = gt[i] * gt[j].inverse();
        let (rotation, sigma) = if is_outlier[k] {
            let reported = match config.outlier_covariance {
                OutlierCovariance::Confident => sigma_min,
                OutlierCovariance::Mixture => mixture_sigma,
            };
            (Rotation::uniform(&mut rng), reported)
        } else {
            (
                Rotation::exp_unchecked(&(eps * mixture_sigma)) * truth,
                mixture_sigma,
            )
        };
        let ratio = if sigma > 0.0 {
            (sigma_min / sigma).powi(2)
        } else {
            1.0
        };
        let inliers = (config.base_inliers * ratio * (config.inlier_jitter * z).exp())
            .round()
            .max(8.0) as u64;
        let mut edge = EdgeMeasurement::new(i, j, rotation).with_inliers(inliers);
        if config.report_true_covariance && sigma > 0.0 {
            edge = edge.with_covariance(Matrix3::identity() * (sigma * sigma))?;
        }
        edges.push(edge);
        edge_sigmas.push(sigma);
    }
    let nodes = gt
        .iter()
        .enumerate()
        .map(|(id, r)| ViewNode::with_gt(id as NodeId, *r))
        .collect();
    Ok(SynthScene {
        graph: ViewGraph::new(nodes, edges)?,
        outlier_edge_ids: outlier_ids,
        edge_sigmas,
    })
}

/// A two-view problem together with its exact (unnormalized) pose.
#[derive(Debug, Clone)]
pub struct TwoViewScene {
    pub geometry: TwoViewGeometry,
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

/// Points uniform in a box in front of camera `i` (depth 4 to 8), kept only
/// if they are also in front of camera `j` under `x_j = R(x_i + t)`, then
/// projected with Gaussian pixel noise on both images.
pub fn generate_two_view_scene(
    n_points: usize,
    pixel_sigma: f64,
    pose: (Rotation, Vector3<f64>),
    intrinsics: (CameraIntrinsics, CameraIntrinsics),
    seed: u64,
) -> Result<TwoViewScene> {
    if n_points < 8 {
        return Err(Error::InvalidArgument(format!(
            "need at least 8 points, got {n_points}"
        )));
    }
    if !(pixel_sigma >= 0.0 && pixel_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "invalid pixel sigma {pixel_sigma}"
        )));
    }
    let (rotation, translation) = pose;
    let noise = Normal::new(0.0, pixel_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let r = rotation.matrix();
    let mut inliers = Vec::with_capacity(n_points);
    let mut draws = 0;
    while inliers.len() < n_points {
        draws += 1;
        if draws > 1000 * n_points {
            return Err(Error::InvalidArgument(
                "pose leaves too few points in front of the second camera".into(),
            ));
        }
        let xi = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(4.0..8.0),
        );
        let xj = r * (xi + translation);
        if xj.z < 1.0 {
            continue;
        }
        let mut jitter = || {
            if pixel_sigma > 0.0 {
                Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                Vector2::zeros()
            }
        };
        let p = intrinsics.0.project(&xi) + jitter();
        let p_prime = intrinsics.1.project(&xj) + jitter();
        inliers.push(Correspondence::new(p, p_prime));
    }
    let geometry =
        TwoViewGeometry::new(rotation, translation, intrinsics.0, intrinsics.1, inliers)?;
    Ok(TwoViewScene {
        geometry,
        rotation,
        translation,
    })
}

/// Correspondence sets consistent with every edge rotation of a graph, for
/// exercising the covariance stage end to end. Edge `(i, j)` with rotation
/// `R_ij` becomes a pair with pose rotation `R_ijᵀ`; the number of points is
/// the edge inlier count clamped to `[8, max_points]`.
pub fn generate_pairs(
    g: &ViewGraph,
    pixel_sigma: f64,
    max_points: usize,
    seed: u64,
) -> Result<PairsFile> {
    let k = CameraIntrinsics::pinhole(500.0, 320.0, 240.0)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(g.edges().len());
    for e in g.edges() {
        let dir = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
        let n = (e.inlier_count.unwrap_or(100) as usize).clamp(8, max_points.max(8));
        let scene_seed: u64 = rng.random();
        let pose = (e.rotation.inverse(), dir);
        let scene =
            generate_two_view_scene(n, pixel_sigma, pose, (k, k), scene_seed).or_else(|_| {
                generate_two_view_scene(
                    n,
                    pixel_sigma,
                    (Rotation::identity(), dir),
                    (k, k),
                    scene_seed,
                )
                .map(|s| TwoViewScene {
                    geometry: s.geometry.with_rotation(e.rotation.inverse()),
                    ..s
                })
            })?;
        pairs.push(PairRecord::from_geometry(e.i, e.j, &scene.geometry));
    }
    Ok(PairsFile { pairs })
}
