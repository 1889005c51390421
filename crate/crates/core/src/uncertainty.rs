//! Covariance of a two-view relative rotation, propagated from the Sampson
//! residuals of its inlier correspondences.
//!
//! Convention: a [`TwoViewGeometry`] maps camera-`i` coordinates to camera-`j`
//! coordinates as `x_j = R (x_i + t)`, so the fundamental matrix is
//! `F = K_j⁻ᵀ R [t]× K_i⁻¹` and `p′ᵀ F p = 0` for a correspondence `(p, p′)`.
//! Rotation Jacobians use the right perturbation `R·exp(δ)`.
//!
//! A view-graph edge built from a pair stores `Rᵀ` (see [`PairRecord`]). The
//! right-perturbation covariance of `R` is then exactly the covariance of the
//! edge residual `log(R_ij (R_i R_jᵀ)ᵀ)`.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3, MatrixXx3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::{hat, Rotation};
use crate::viewgraph::{EdgeMeasurement, NodeId, ViewGraph, ViewNode};

pub const MAX_CONDITION: f64 = 1e12;
const MIN_SAMPSON_DENOMINATOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    k: Matrix3<f64>,
}

impl CameraIntrinsics {
    pub fn new(k: Matrix3<f64>) -> Result<Self> {
        if !k.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidIntrinsics("non-finite entries".into()));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::InvalidIntrinsics(
                "K must be upper triangular".into(),
            ));
        }
        if k[(2, 2)] != 1.0 {
            return Err(Error::InvalidIntrinsics("K[2][2] must be 1".into()));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::InvalidIntrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        Ok(CameraIntrinsics { k })
    }

    pub fn pinhole(focal: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::new(Matrix3::new(focal, 0.0, cx, 0.0, focal, cy, 0.0, 0.0, 1.0))
    }

    pub fn identity() -> Self {
        CameraIntrinsics {
            k: Matrix3::identity(),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn inverse(&self) -> Result<Matrix3<f64>> {
        self.k
            .try_inverse()
            .ok_or_else(|| Error::InvalidIntrinsics("K is singular".into()))
    }

    /// Pixel projection of a point in camera coordinates.
    pub fn project(&self, x: &Vector3<f64>) -> Vector2<f64> {
        let h = self.k * x;
        Vector2::new(h.x / h.z, h.y / h.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p: Vector2<f64>,
    pub p_prime: Vector2<f64>,
}

impl Correspondence {
    pub fn new(p: Vector2<f64>, p_prime: Vector2<f64>) -> Self {
        Correspondence { p, p_prime }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoViewGeometry {
    pub rotation: Rotation,
    translation: Vector3<f64>,
    pub intrinsics_i: CameraIntrinsics,
    pub intrinsics_j: CameraIntrinsics,
    pub inliers: Vec<Correspondence>,
}

impl TwoViewGeometry {
    /// The translation is rescaled to unit norm.
    pub fn new(
        rotation: Rotation,
        translation: Vector3<f64>,
        intrinsics_i: CameraIntrinsics,
        intrinsics_j: CameraIntrinsics,
        inliers: Vec<Correspondence>,
    ) -> Result<Self> {
        let n = translation.norm();
        if !(n > 1e-12 && n.is_finite()) {
            return Err(Error::InvalidArgument(
                "translation must be finite and non-zero".into(),
            ));
        }
        if inliers
            .iter()
            .any(|c| !(c.p.iter().chain(c.p_prime.iter()).all(|v| v.is_finite())))
        {
            return Err(Error::InvalidArgument("non-finite correspondence".into()));
        }
        Ok(TwoViewGeometry {
            rotation,
            translation: translation / n,
            intrinsics_i,
            intrinsics_j,
            inliers,
        })
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn with_rotation(&self, rotation: Rotation) -> Self {
        TwoViewGeometry {
            rotation,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    RotationOnly,
    MarginalizeTranslation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceResult {
    pub covariance: Matrix3<f64>,
    pub whitener: Matrix3<f64>,
    pub trace: f64,
    /// Frobenius norm of the inverse covariance.
    pub fro_norm: f64,
}

impl CovarianceResult {
    pub fn from_covariance(covariance: Matrix3<f64>) -> Result<Self> {
        let whitener = whitener_of(&covariance)?;
        let information = whitener * whitener.transpose();
        Ok(CovarianceResult {
            covariance,
            whitener,
            trace: covariance.trace(),
            fro_norm: information.norm(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    Trace,
    FroNormInv,
}

pub fn scalar_uncertainty(c: &CovarianceResult, kind: ScalarKind) -> f64 {
    match kind {
        ScalarKind::Trace => c.trace,
        ScalarKind::FroNormInv => c.fro_norm,
    }
}

/// Lower-triangular `D` with `D Dᵀ = C⁻¹`. Requires `C` symmetric positive
/// definite.
pub fn whitener_of(covariance: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if !covariance.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(
            "covariance has non-finite entries".into(),
        ));
    }
    let scale = covariance.amax().max(1.0);
    if (covariance - covariance.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidArgument("covariance is not symmetric".into()));
    }
    let chol = covariance
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("covariance is not positive definite".into()))?;
    let inv = chol.inverse();
    let inv = 0.5 * (inv + inv.transpose());
    let d = inv.cholesky().ok_or_else(|| {
        Error::InvalidArgument("inverse covariance is not positive definite".into())
    })?;
    Ok(d.l())
}

struct Epipolar {
    left: Matrix3<f64>,  // K_j⁻ᵀ
    right: Matrix3<f64>, // K_i⁻¹
    rotation: Matrix3<f64>,
    t_cross: Matrix3<f64>,
}

impl Epipolar {
    fn new(geom: &TwoViewGeometry) -> Result<Self> {
        Ok(Epipolar {
            left: geom.intrinsics_j.inverse()?.transpose(),
            right: geom.intrinsics_i.inverse()?,
            rotation: geom.rotation.matrix(),
            t_cross: hat(geom.translation()),
        })
    }

    fn fundamental(&self) -> Matrix3<f64> {
        self.left * self.rotation * self.t_cross * self.right
    }

    /// dF for `R ← R exp(δ)` along axis `k`.
    fn rotation_derivative(&self, k: usize) -> Matrix3<f64> {
        let mut axis = Vector3::zeros();
        axis[k] = 1.0;
        self.left * self.rotation * hat(&axis) * self.t_cross * self.right
    }

    /// dF for `t ← t + η b` (tangent direction `b` of the unit sphere).
    fn translation_derivative(&self, b: &Vector3<f64>) -> Matrix3<f64> {
        self.left * self.rotation * hat(b) * self.right
    }
}

pub fn fundamental_from_pose(geom: &TwoViewGeometry) -> Result<Matrix3<f64>> {
    Ok(Epipolar::new(geom)?.fundamental())
}

/// Signed Sampson distance of a correspondence to the epipolar constraint.
pub fn sampson_distance(f: &Matrix3<f64>, c: &Correspondence) -> Result<f64> {
    let p = c.p.push(1.0);
    let q = c.p_prime.push(1.0);
    let fp = f * p;
    let ftq = f.transpose() * q;
    let denom = fp.x * fp.x + fp.y * fp.y + ftq.x * ftq.x + ftq.y * ftq.y;
    if !(denom >= MIN_SAMPSON_DENOMINATOR) {
        return Err(Error::DegenerateCorrespondence(denom));
    }
    Ok(q.dot(&fp) / denom.sqrt())
}

/// Sampson residual and its directional derivatives along each `df`.
fn sampson_with_derivatives<const N: usize>(
    f: &Matrix3<f64>,
    dfs: &[Matrix3<f64>; N],
    c: &Correspondence,
) -> Result<(f64, [f64; N])> {
    let p = c.p.push(1.0);
    let q = c.p_prime.push(1.0);
    let a = f * p;
    let b = f.transpose() * q;
    let e = q.dot(&a);
    let d = a.x * a.x + a.y * a.y + b.x * b.x + b.y * b.y;
    if !(d >= MIN_SAMPSON_DENOMINATOR) {
        return Err(Error::DegenerateCorrespondence(d));
    }
    let sqrt_d = d.sqrt();
    let grads = std::array::from_fn(|k| {
        let df = &dfs[k];
        let da = df * p;
        let db = df.transpose() * q;
        let de = q.dot(&da);
        let dd = 2.0 * (a.x * da.x + a.y * da.y + b.x * db.x + b.y * db.y);
        de / sqrt_d - e * dd / (2.0 * d * sqrt_d)
    });
    Ok((e / sqrt_d, grads))
}

fn require_inliers(geom: &TwoViewGeometry, needed: usize) -> Result<()> {
    if geom.inliers.len() < needed {
        return Err(Error::InsufficientData(format!(
            "{} inliers, at least {needed} required",
            geom.inliers.len()
        )));
    }
    Ok(())
}

/// Stacked gradients of the Sampson residuals with respect to a right
/// axis-angle perturbation of the rotation (one row per inlier).
pub fn rotation_jacobian(geom: &TwoViewGeometry) -> Result<MatrixXx3<f64>> {
    require_inliers(geom, 3)?;
    let epi = Epipolar::new(geom)?;
    let f = epi.fundamental();
    let dfs: [Matrix3<f64>; 3] = std::array::from_fn(|k| epi.rotation_derivative(k));
    let mut jac = MatrixXx3::zeros(geom.inliers.len());
    for (row, c) in geom.inliers.iter().enumerate() {
        let (_, g) = sampson_with_derivatives(&f, &dfs, c)?;
        for k in 0..3 {
            jac[(row, k)] = g[k];
        }
    }
    Ok(jac)
}

/// Orthonormal basis of the tangent plane of the unit sphere at `t`.
fn sphere_tangent_basis(t: &Vector3<f64>) -> [Vector3<f64>; 2] {
    let axis = t.iamin();
    let mut e = Vector3::zeros();
    e[axis] = 1.0;
    let b1 = t.cross(&e).normalize();
    let b2 = t.cross(&b1);
    [b1, b2]
}

/// N×5 Jacobian over rotation (3) and the unit translation's tangent plane (2).
pub fn pose_jacobian(geom: &TwoViewGeometry) -> Result<DMatrix<f64>> {
    require_inliers(geom, 5)?;
    let epi = Epipolar::new(geom)?;
    let f = epi.fundamental();
    let [b1, b2] = sphere_tangent_basis(geom.translation());
    let dfs: [Matrix3<f64>; 5] = [
        epi.rotation_derivative(0),
        epi.rotation_derivative(1),
        epi.rotation_derivative(2),
        epi.translation_derivative(&b1),
        epi.translation_derivative(&b2),
    ];
    let mut jac = DMatrix::zeros(geom.inliers.len(), 5);
    for (row, c) in geom.inliers.iter().enumerate() {
        let (_, g) = sampson_with_derivatives(&f, &dfs, c)?;
        for k in 0..5 {
            jac[(row, k)] = g[k];
        }
    }
    Ok(jac)
}

fn checked_inverse(information: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = 0.5 * (&information + information.transpose());
    let eig = sym.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(Error::DegenerateCovariance(condition));
    }
    let inv = sym
        .cholesky()
        .ok_or(Error::DegenerateCovariance(condition))?
        .inverse();
    Ok(0.5 * (&inv + inv.transpose()))
}

/// `C = σ² (JᵀJ)⁻¹` for an N×3 rotation Jacobian.
pub fn covariance_from_jacobian(
    jacobian: &MatrixXx3<f64>,
    residual_sigma: f64,
) -> Result<CovarianceResult> {
    let information = jacobian.transpose() * jacobian;
    let inv = checked_inverse(DMatrix::from_iterator(3, 3, information.iter().copied()))?;
    let cov: Matrix3<f64> = inv.fixed_view::<3, 3>(0, 0).into_owned();
    CovarianceResult::from_covariance(cov * (residual_sigma * residual_sigma))
}

pub fn covariance_of_rotation(
    geom: &TwoViewGeometry,
    residual_sigma: f64,
    mode: CovarianceMode,
) -> Result<CovarianceResult> {
    if !(residual_sigma > 0.0 && residual_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "residual sigma must be positive, got {residual_sigma}"
        )));
    }
    match mode {
        CovarianceMode::RotationOnly => {
            covariance_from_jacobian(&rotation_jacobian(geom)?, residual_sigma)
        }
        CovarianceMode::MarginalizeTranslation => {
            let jac = pose_jacobian(geom)?;
            let full = checked_inverse(jac.transpose() * &jac)?;
            let block: Matrix3<f64> = full.fixed_view::<3, 3>(0, 0).into_owned();
            CovarianceResult::from_covariance(block * (residual_sigma * residual_sigma))
        }
    }
}

/// One two-view pair in the correspondence-set JSON file. `qwxyz` and `t`
/// follow the [`TwoViewGeometry`] convention; intrinsics are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub i: NodeId,
    pub j: NodeId,
    #[serde(rename = "K_i")]
    pub k_i: [f64; 9],
    #[serde(rename = "K_j")]
    pub k_j: [f64; 9],
    pub qwxyz: [f64; 4],
    pub t: [f64; 3],
    pub matches: Vec<[f64; 4]>,
}

impl PairRecord {
    pub fn from_geometry(i: NodeId, j: NodeId, geom: &TwoViewGeometry) -> Self {
        let row_major = |k: &CameraIntrinsics| {
            let t = k.matrix().transpose();
            std::array::from_fn(|n| t.as_slice()[n])
        };
        PairRecord {
            i,
            j,
            k_i: row_major(&geom.intrinsics_i),
            k_j: row_major(&geom.intrinsics_j),
            qwxyz: geom.rotation.wxyz(),
            t: [geom.translation.x, geom.translation.y, geom.translation.z],
            matches: geom
                .inliers
                .iter()
                .map(|c| [c.p.x, c.p.y, c.p_prime.x, c.p_prime.y])
                .collect(),
        }
    }

    pub fn geometry(&self) -> Result<TwoViewGeometry> {
        let [w, x, y, z] = self.qwxyz;
        TwoViewGeometry::new(
            Rotation::from_wxyz(w, x, y, z)?,
            Vector3::from_column_slice(&self.t),
            CameraIntrinsics::new(Matrix3::from_row_slice(&self.k_i))?,
            CameraIntrinsics::new(Matrix3::from_row_slice(&self.k_j))?,
            self.matches
                .iter()
                .map(|m| Correspondence::new(Vector2::new(m[0], m[1]), Vector2::new(m[2], m[3])))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsFile {
    pub pairs: Vec<PairRecord>,
}

impl PairsFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self).expect("pairs serialization cannot fail");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Outcome of weighing one pair.
#[derive(Debug)]
pub struct WeighedPair {
    pub i: NodeId,
    pub j: NodeId,
    pub edge_rotation: Rotation,
    pub inliers: u64,
    pub covariance: Result<CovarianceResult>,
}

/// Computes every pair's covariance in parallel; output follows input order.
pub fn weigh_pairs(
    pairs: &PairsFile,
    residual_sigma: f64,
    mode: CovarianceMode,
) -> Result<Vec<WeighedPair>> {
    pairs
        .pairs
        .par_iter()
        .enumerate()
        .map(|(idx, rec)| {
            let geom = rec.geometry().map_err(|e| {
                Error::schema(
                    format!("pairs[{idx}] (i={}, j={})", rec.i, rec.j),
                    e.to_string(),
                )
            })?;
            Ok(WeighedPair {
                i: rec.i,
                j: rec.j,
                edge_rotation: geom.rotation.inverse(),
                inliers: geom.inliers.len() as u64,
                covariance: covariance_of_rotation(&geom, residual_sigma, mode),
            })
        })
        .collect()
}

/// Builds a view graph from weighed pairs. Nodes come from `template` when
/// given (keeping ground truth), otherwise from the pair endpoints. Pairs whose
/// covariance failed keep no `cov` field.
pub fn graph_from_weighed(
    weighed: &[WeighedPair],
    template: Option<&ViewGraph>,
) -> Result<ViewGraph> {
    let nodes: Vec<ViewNode> = match template {
        Some(g) => g.nodes().to_vec(),
        None => {
            let mut ids: Vec<NodeId> = weighed.iter().flat_map(|w| [w.i, w.j]).collect();
            ids.sort_unstable();
            ids.dedup();
            ids.into_iter().map(ViewNode::new).collect()
        }
    };
    let mut edges = Vec::with_capacity(weighed.len());
    for w in weighed {
        let mut edge = EdgeMeasurement::new(w.i, w.j, w.edge_rotation).with_inliers(w.inliers);
        match &w.covariance {
            Ok(c) => edge = edge.with_covariance(c.covariance)?,
            Err(e) => log::warn!(
                "pair ({}, {}): {e}; leaving it without covariance",
                w.i,
                w.j
            ),
        }
        edges.push(edge);
    }
    ViewGraph::new(nodes, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::Rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cross_f() -> Matrix3<f64> {
        Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> TwoViewGeometry {
        let rotation = Rotation::exp(&Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        ))
        .unwrap();
        let t = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.2..0.2),
        );
        let ki = CameraIntrinsics::pinhole(rng.random_range(400.0..900.0), 320.0, 240.0).unwrap();
        let kj = CameraIntrinsics::pinhole(rng.random_range(400.0..900.0), 300.0, 250.0).unwrap();
        let r = rotation.matrix();
        let inliers = (0..n)
            .map(|_| {
                let x = Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(4.0..8.0),
                );
                let xj = r * (x + t);
                Correspondence::new(ki.project(&x), kj.project(&xj))
            })
            .collect();
        TwoViewGeometry::new(rotation, t, ki, kj, inliers).unwrap()
    }

    #[test]
    fn fundamental_of_pure_x_translation() {
        let geom = TwoViewGeometry::new(
            Rotation::identity(),
            Vector3::new(1.0, 0.0, 0.0),
            CameraIntrinsics::identity(),
            CameraIntrinsics::identity(),
            vec![],
        )
        .unwrap();
        assert_eq!(fundamental_from_pose(&geom).unwrap(), cross_f());
    }

    #[test]
    fn fundamental_is_rank_two_and_matches_direct_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let geom = random_scene(&mut rng, 10);
            let f = fundamental_from_pose(&geom).unwrap();
            let t = geom.translation();
            let tx = Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0);
            let direct = geom
                .intrinsics_j
                .matrix()
                .try_inverse()
                .unwrap()
                .transpose()
                * geom.rotation.matrix()
                * tx
                * geom.intrinsics_i.matrix().try_inverse().unwrap();
            assert!((f - direct).amax() <= 1e-12 * direct.amax().max(1.0));
            let sv = f.singular_values();
            assert!(sv.min() < 1e-10 * sv.max());
            for c in &geom.inliers {
                assert!(sampson_distance(&f, c).unwrap().abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_intrinsics_are_rejected() {
        assert!(CameraIntrinsics::new(Matrix3::zeros()).is_err());
        assert!(
            CameraIntrinsics::new(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0))
                .is_err()
        );
        assert!(
            CameraIntrinsics::new(Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0))
                .is_err()
        );
        assert!(
            CameraIntrinsics::new(Matrix3::new(1.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0))
                .is_err()
        );
    }

    #[test]
    fn sampson_examples() {
        let f = cross_f();
        let on_line = Correspondence::new(Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0));
        assert_eq!(sampson_distance(&f, &on_line).unwrap(), 0.0);
        let off = Correspondence::new(Vector2::new(0.0, 0.0), Vector2::new(0.0, 1.0));
        let d = sampson_distance(&f, &off).unwrap();
        assert!((d + 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((sampson_distance(&(f * 10.0), &off).unwrap() - d).abs() < 1e-15);
        assert!(matches!(
            sampson_distance(&Matrix3::zeros(), &off),
            Err(Error::DegenerateCorrespondence(_))
        ));
    }

    #[test]
    fn jacobian_needs_three_inliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut geom = random_scene(&mut rng, 2);
        assert!(matches!(
            rotation_jacobian(&geom),
            Err(Error::InsufficientData(_))
        ));
        geom.inliers.clear();
        assert!(covariance_of_rotation(&geom, 1.0, CovarianceMode::RotationOnly).is_err());
    }

    #[test]
    fn jacobian_is_finite_and_well_posed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let geom = random_scene(&mut rng, 40);
        let j = rotation_jacobian(&geom).unwrap();
        assert!(j.iter().all(|v| v.is_finite()));
        let jtj: Matrix3<f64> = j.transpose() * &j;
        assert!(jtj.cholesky().is_some());
    }

    #[test]
    fn duplicated_correspondences_double_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let geom = random_scene(&mut rng, 30);
        let j = rotation_jacobian(&geom).unwrap();
        let mut doubled = geom.clone();
        doubled.inliers.extend(geom.inliers.clone());
        let j2 = rotation_jacobian(&doubled).unwrap();
        let a: Matrix3<f64> = j.transpose() * &j;
        let b: Matrix3<f64> = j2.transpose() * &j2;
        assert!((b - 2.0 * a).amax() <= 1e-12 * a.amax());
    }

    #[test]
    fn identity_information_gives_identity_covariance() {
        let mut j = MatrixXx3::zeros(6);
        for r in 0..6 {
            j[(r, r % 3)] = 1.0 / 2f64.sqrt();
        }
        let c = covariance_from_jacobian(&j, 1.0).unwrap();
        assert!((c.covariance - Matrix3::identity()).amax() < 1e-14);
        assert!((c.whitener - Matrix3::identity()).amax() < 1e-14);
    }

    #[test]
    fn whitener_of_diagonal_covariance() {
        let c =
            CovarianceResult::from_covariance(Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)))
                .unwrap();
        assert!((c.whitener - Matrix3::from_diagonal(&Vector3::new(0.5, 1.0, 1.0))).amax() < 1e-15);
        assert_eq!(scalar_uncertainty(&c, ScalarKind::Trace), 6.0);
        assert!(
            (scalar_uncertainty(&c, ScalarKind::FroNormInv) - 1.436_140_661_634_507_4).abs()
                < 1e-12
        );
        let unit = CovarianceResult::from_covariance(Matrix3::identity()).unwrap();
        assert_eq!(scalar_uncertainty(&unit, ScalarKind::Trace), 3.0);
    }

    #[test]
    fn whitener_rejects_bad_covariances() {
        assert!(whitener_of(&Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 1.0))).is_err());
        assert!(whitener_of(&Matrix3::new(1.0, 0.2, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)).is_err());
        assert!(whitener_of(&Matrix3::from_element(f64::NAN)).is_err());
    }

    #[test]
    fn degenerate_information_is_reported() {
        let mut j = MatrixXx3::zeros(5);
        for r in 0..5 {
            j[(r, 0)] = 1.0 + r as f64;
            j[(r, 1)] = 2.0;
        }
        assert!(matches!(
            covariance_from_jacobian(&j, 1.0),
            Err(Error::DegenerateCovariance(_))
        ));
    }

    #[test]
    fn marginalizing_translation_never_shrinks_uncertainty() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let geom = random_scene(&mut rng, 60);
            let a = covariance_of_rotation(&geom, 1.0, CovarianceMode::RotationOnly).unwrap();
            let b =
                covariance_of_rotation(&geom, 1.0, CovarianceMode::MarginalizeTranslation).unwrap();
            let diff = b.covariance - a.covariance;
            assert!(diff.symmetric_eigen().eigenvalues.min() > -1e-9 * a.covariance.amax());
        }
    }

    #[test]
    fn residual_sigma_scales_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let geom = random_scene(&mut rng, 30);
        let a = covariance_of_rotation(&geom, 1.0, CovarianceMode::RotationOnly).unwrap();
        let b = covariance_of_rotation(&geom, 2.5, CovarianceMode::RotationOnly).unwrap();
        assert!((b.covariance - a.covariance * 6.25).amax() < 1e-12 * b.covariance.amax());
        assert!(covariance_of_rotation(&geom, 0.0, CovarianceMode::RotationOnly).is_err());
    }

    #[test]
    fn pair_record_round_trip_and_edge_orientation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let geom = random_scene(&mut rng, 12);
        let rec = PairRecord::from_geometry(3, 7, &geom);
        let back = rec.geometry().unwrap();
        assert_eq!(back.inliers, geom.inliers);
        assert!(back.rotation.approx_eq(&geom.rotation, 0.0));
        let weighed = weigh_pairs(
            &PairsFile { pairs: vec![rec] },
            1.0,
            CovarianceMode::RotationOnly,
        )
        .unwrap();
        assert_eq!(weighed[0].edge_rotation, geom.rotation.inverse());
        let g = graph_from_weighed(&weighed, None).unwrap();
        assert_eq!(g.node_ids().collect::<Vec<_>>(), vec![3, 7]);
        assert_eq!(g.edges()[0].inlier_count, Some(12));
        assert!(g.edges()[0].covariance().is_some());
    }
}
