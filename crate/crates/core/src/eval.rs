//! Gauge alignment against ground truth and rotation-error statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::loss::{LossKind, LossSpec};
use crate::so3::{geodesic_angle, relative_residual, right_jacobian_inv, Rotation};
use crate::viewgraph::NodeId;

/// Cauchy scale (radians) of the robust alignment.
pub const ALIGNMENT_SCALE: f64 = 0.1;

const ALIGN_MAX_OUTER: usize = 100;
const ALIGN_MAX_INNER: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// Applied on the right: the aligned estimate of view `i` is `est_i · r_align`.
    pub r_align: Rotation,
    /// Geodesic error in degrees after alignment.
    pub per_view_errors: BTreeMap<NodeId, f64>,
    pub inlier_fraction_under_5deg: f64,
}

impl AlignmentResult {
    pub fn errors(&self) -> Vec<f64> {
        self.per_view_errors.values().copied().collect()
    }

    pub fn median_error(&self) -> f64 {
        median(&self.errors())
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Node id, estimate, ground truth and `est_iᵀ · gt_i`.
type ViewPair = (NodeId, Rotation, Rotation, Matrix3<f64>);

/// `est_iᵀ · gt_i`: the alignment each view asks for on its own.
fn per_view_offsets(
    est: &BTreeMap<NodeId, Rotation>,
    gt: &BTreeMap<NodeId, Rotation>,
) -> Result<Vec<ViewPair>> {
    let common: Vec<_> = est
        .iter()
        .filter_map(|(id, e)| {
            gt.get(id)
                .map(|g| (*id, *e, *g, (e.inverse() * *g).matrix()))
        })
        .collect();
    if common.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    Ok(common)
}

/// Chordal mean of unit quaternions: dominant eigenvector of `Σ q qᵀ`.
fn quaternion_mean(rotations: impl Iterator<Item = Rotation>) -> Rotation {
    let mut acc = Matrix4::zeros();
    for r in rotations {
        let q = Vector4::from(r.wxyz());
        acc += q * q.transpose();
    }
    let eig = acc.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(k);
    Rotation::from_wxyz(v[0], v[1], v[2], v[3]).unwrap_or_default()
}

/// Residual of one view for alignment `a`: `log(a · gt_iᵀ · est_i)`.
fn alignment_residual(a: &Rotation, est_i: &Rotation, gt_i: &Rotation) -> Vector3<f64> {
    relative_residual(&est_i.inverse(), &gt_i.inverse(), a)
}

fn alignment_cost(
    a: &Rotation,
    views: &[(NodeId, Rotation, Rotation, Matrix3<f64>)],
    loss: &LossSpec,
) -> f64 {
    views
        .iter()
        .map(|(_, e, g, _)| loss.eval(alignment_residual(a, e, g).norm_squared()).value)
        .sum()
}

/// Robust single-rotation alignment with an arbitrary loss on the squared
/// residual norm.
pub fn align_rotations_with(
    est: &BTreeMap<NodeId, Rotation>,
    gt: &BTreeMap<NodeId, Rotation>,
    loss: &LossSpec,
) -> Result<AlignmentResult> {
    let views = per_view_offsets(est, gt)?;
    let mut a = quaternion_mean(views.iter().map(|(_, e, g, _)| e.inverse() * *g));
    let mut cost = alignment_cost(&a, &views, loss);
    for _ in 0..ALIGN_MAX_OUTER {
        let weights: Vec<f64> = views
            .iter()
            .map(|(_, e, g, _)| {
                loss.eval(alignment_residual(&a, e, g).norm_squared())
                    .weight
            })
            .collect();
        let weighted = |r: &Rotation| -> f64 {
            views
                .iter()
                .zip(&weights)
                .map(|((_, e, g, _), w)| w * alignment_residual(r, e, g).norm_squared())
                .sum()
        };
        let start = a;
        let mut current = weighted(&a);
        for _ in 0..ALIGN_MAX_INNER {
            let mut h = Matrix3::zeros();
            let mut grad = Vector3::zeros();
            for ((_, e, g, m), w) in views.iter().zip(&weights) {
                let r = alignment_residual(&a, e, g);
                let j = right_jacobian_inv(&r) * m;
                h += *w * j.transpose() * j;
                grad += *w * j.transpose() * r;
            }
            let Some(step) = h.cholesky().map(|c| -c.solve(&grad)) else {
                break;
            };
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-6 {
                let cand = a * Rotation::exp_unchecked(&(step * t));
                let c = weighted(&cand);
                if c <= current {
                    a = cand;
                    current = c;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted || step.norm() * t < 1e-15 {
                break;
            }
        }
        let new_cost = alignment_cost(&a, &views, loss);
        if new_cost > cost {
            a = start;
            break;
        }
        let done =
            geodesic_angle(&a, &start) < 1e-15 || cost - new_cost <= 1e-15 * cost.max(1e-300);
        cost = new_cost;
        if done {
            break;
        }
    }
    Ok(errors_after_alignment(a, &views))
}

fn errors_after_alignment(
    a: Rotation,
    views: &[(NodeId, Rotation, Rotation, Matrix3<f64>)],
) -> AlignmentResult {
    let per_view_errors: BTreeMap<NodeId, f64> = views
        .iter()
        .map(|(id, e, g, _)| (*id, geodesic_angle(&(*e * a), g).to_degrees()))
        .collect();
    let under = per_view_errors.values().filter(|&&d| d < 5.0).count();
    AlignmentResult {
        r_align: a,
        inlier_fraction_under_5deg: under as f64 / per_view_errors.len() as f64,
        per_view_errors,
    }
}

/// Aligns `est` to `gt` over their common ids with a Cauchy loss of scale
/// [`ALIGNMENT_SCALE`], initialized from the chordal quaternion mean.
pub fn align_rotations(
    est: &BTreeMap<NodeId, Rotation>,
    gt: &BTreeMap<NodeId, Rotation>,
) -> Result<AlignmentResult> {
    let loss = LossSpec::with_scale(LossKind::Cauchy, ALIGNMENT_SCALE)?;
    align_rotations_with(est, gt, &loss)
}

fn check_errors(errors: &[f64]) -> Result<()> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("error list is empty".into()));
    }
    if let Some(e) = errors.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(Error::InvalidArgument(format!("invalid error value {e}")));
    }
    Ok(())
}

/// Area under the recall curve up to `alpha` degrees, in percent.
pub fn auc(errors: &[f64], alpha: f64) -> Result<f64> {
    check_errors(errors)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be positive, got {alpha}"
        )));
    }
    let sum: f64 = errors.iter().map(|e| (alpha - e).max(0.0)).sum();
    Ok(100.0 * sum / (alpha * errors.len() as f64))
}

/// Distinct sorted error values with the fraction of errors at or below each.
pub fn cdf_points(errors: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_errors(errors)?;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (k, e) in sorted.iter().enumerate() {
        let frac = (k + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *e => last.1 = frac,
            _ => out.push((*e, frac)),
        }
    }
    Ok(out)
}

pub fn cdf_csv(errors: &[f64]) -> Result<String> {
    let mut s = String::from("error_deg,cdf\n");
    for (e, f) in cdf_points(errors)? {
        writeln!(s, "{e},{f}").unwrap();
    }
    Ok(s)
}

pub fn export_cdf(errors: &[f64], path: &Path) -> Result<()> {
    let csv = cdf_csv(errors)?;
    std::fs::write(path, csv).map_err(|e| Error::io(path, e))
}
