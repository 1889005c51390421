#![allow(dead_code)]

use nalgebra::{Matrix3, MatrixXx3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rotavg::so3::Rotation;
use rotavg::uncertainty::{
    fundamental_from_pose, sampson_distance, Correspondence, TwoViewGeometry,
};

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point
/// Gauss rule.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * GK_WEIGHTS[7];
    let mut gauss = fc * GAUSS_WEIGHTS[3];
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let pair = f(c - x) + f(c + x);
        kronrod += GK_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h)
}

/// Adaptive Gauss–Kronrod quadrature on a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (value, err) = gk15(f, a, b);
        if err <= tol || depth == 0 {
            return value;
        }
        let m = 0.5 * (a + b);
        recurse(f, a, m, 0.5 * tol, depth - 1) + recurse(f, m, b, 0.5 * tol, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    recurse(&f, a, b, tol, 50)
}

pub fn ln_gamma_ref(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// σ-marginalized inlier weight: the χ_ν density of `r` at scale σ, trimmed
/// at `kσ`, averaged over σ uniform on `[0, σ_max]`. Integrated in `ln σ`.
pub fn magsac_weight_by_quadrature(r: f64, nu: u32, k: f64, sigma_max: f64) -> f64 {
    let r = if r == 0.0 { 1e-9 * sigma_max } else { r };
    let lower = r / k;
    if lower >= sigma_max {
        return 0.0;
    }
    let nu = nu as f64;
    let ln_norm = (1.0 - 0.5 * nu) * std::f64::consts::LN_2 - ln_gamma_ref(0.5 * nu);
    let density_times_sigma = |u: f64| {
        let sigma = u.exp();
        let z = r / sigma;
        (ln_norm + (nu - 1.0) * z.ln() - 0.5 * z * z).exp()
    };
    integrate(density_times_sigma, lower.ln(), sigma_max.ln(), 1e-13) / sigma_max
}

/// Upper incomplete gamma by quadrature of `t^{a-1} e^{-t}` over `[x, x + 80]`.
pub fn upper_gamma_by_quadrature(a: f64, x: f64) -> f64 {
    integrate(|t| ((a - 1.0) * t.ln() - t).exp(), x, x + 80.0, 1e-15)
}

/// χ²_ν CDF oracle from statrs.
pub fn chi_squared_cdf(nu: f64, x: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(nu).unwrap().cdf(x)
}

pub fn random_rotation(rng: &mut impl Rng) -> Rotation {
    Rotation::uniform(rng)
}

pub fn random_small_rotation(rng: &mut impl Rng, max_angle: f64) -> Rotation {
    let axis: Vector3<f64> = Vector3::from_fn(|_, _| rng.sample(StandardNormal));
    let angle = rng.random_range(0.0..max_angle);
    Rotation::exp(&(axis.normalize() * angle)).unwrap()
}

/// Random symmetric positive definite matrix with eigenvalues spread over
/// `decades` orders of magnitude.
pub fn random_spd(rng: &mut impl Rng, decades: f64) -> Matrix3<f64> {
    let q = random_rotation(rng).matrix();
    let eig = Vector3::from_fn(|_, _| 10f64.powf(rng.random_range(-decades..decades) * 0.5));
    let c = q * Matrix3::from_diagonal(&eig) * q.transpose();
    0.5 * (c + c.transpose())
}

pub fn sampson_residuals(geom: &TwoViewGeometry) -> Vec<f64> {
    let f = fundamental_from_pose(geom).unwrap();
    geom.inliers
        .iter()
        .map(|c| sampson_distance(&f, c).unwrap())
        .collect()
}

/// Central finite-difference Jacobian of the Sampson residuals with respect to
/// `R ← R exp(δ)`.
pub fn numeric_rotation_jacobian(geom: &TwoViewGeometry, h: f64) -> MatrixXx3<f64> {
    let n = geom.inliers.len();
    let mut jac = MatrixXx3::zeros(n);
    for k in 0..3 {
        let mut d = Vector3::zeros();
        d[k] = h;
        let plus = geom.with_rotation(geom.rotation * Rotation::exp(&d).unwrap());
        let minus = geom.with_rotation(geom.rotation * Rotation::exp(&-d).unwrap());
        let rp = sampson_residuals(&plus);
        let rm = sampson_residuals(&minus);
        for row in 0..n {
            jac[(row, k)] = (rp[row] - rm[row]) / (2.0 * h);
        }
    }
    jac
}

/// Rotation minimizing the Sampson cost with the translation held fixed,
/// by Gauss–Newton on a finite-difference Jacobian.
pub fn refine_rotation(geom: &TwoViewGeometry) -> Rotation {
    let mut g = geom.clone();
    for _ in 0..20 {
        let r = nalgebra::DVector::from_vec(sampson_residuals(&g));
        let jac = numeric_rotation_jacobian(&g, 1e-6);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let step = -jtj.cholesky().unwrap().solve(&jtr);
        g = g.with_rotation(g.rotation * Rotation::exp(&step).unwrap());
        if step.norm() < 1e-13 {
            break;
        }
    }
    g.rotation
}

/// Sample covariance of `log(R_trueᵀ R̂)` over noisy re-observations of the
/// noiseless correspondences in `clean`.
pub fn monte_carlo_rotation_covariance(
    clean: &TwoViewGeometry,
    pixel_sigma: f64,
    draws: usize,
    seed: u64,
) -> Matrix3<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, pixel_sigma).unwrap();
    let truth = clean.rotation;
    let mut samples = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut g = clean.clone();
        for c in g.inliers.iter_mut() {
            *c = Correspondence::new(
                c.p + nalgebra::Vector2::from_fn(|_, _| noise.sample(&mut rng)),
                c.p_prime + nalgebra::Vector2::from_fn(|_, _| noise.sample(&mut rng)),
            );
        }
        let est = refine_rotation(&g);
        samples.push((truth.inverse() * est).log());
    }
    let mean = samples.iter().fold(Vector3::zeros(), |a, s| a + s) / draws as f64;
    samples
        .iter()
        .map(|s| (s - mean) * (s - mean).transpose())
        .fold(Matrix3::zeros(), |a, m| a + m)
        / (draws as f64 - 1.0)
}

pub fn correlation(c: &Matrix3<f64>, a: usize, b: usize) -> f64 {
    c[(a, b)] / (c[(a, a)] * c[(b, b)]).sqrt()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion:>2} {:<4} {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}
