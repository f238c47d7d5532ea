//! Real spherical harmonics up to degree 3, evaluated per latent channel.
//!
//! Basis ordering is (l, m) = (0,0), (1,-1), (1,0), (1,1), (2,-2) ... (3,3),
//! with the all-positive real-basis constants (no Condon-Shortley signs).

use nalgebra::Vector3;

use crate::error::{LrfError, Result};

/// Coefficients per channel at the maximum degree.
pub const SH_COEFFS: usize = 16;

/// Maximum supported degree.
pub const SH_MAX_DEGREE: usize = 3;

/// Y_0^0, the DC basis constant.
pub const SH_C0: f64 = 0.28209479177387814;

const SH_C1: f64 = 0.4886025119029199;
const SH_C2: [f64; 3] = [1.0925484305920792, 0.31539156525252005, 0.5462742152960396];
const SH_C3: [f64; 6] = [
    0.5900435899266435,
    2.890611442640554,
    0.4570457994644658,
    0.3731763325901154,
    1.445305721320277,
    0.5900435899266435,
];

/// Number of coefficients active at a given degree: (degree + 1)^2.
pub fn coeffs_for_degree(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Evaluate the 16 basis functions at a unit direction.
pub fn sh_basis(dir: &Vector3<f64>) -> [f64; SH_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let (x2, y2, z2) = (x * x, y * y, z * z);

    [
        SH_C0,
        SH_C1 * y,
        SH_C1 * z,
        SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[0] * y * z,
        SH_C2[1] * (3.0 * z2 - 1.0),
        SH_C2[0] * x * z,
        SH_C2[2] * (x2 - y2),
        SH_C3[0] * y * (3.0 * x2 - y2),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (5.0 * z2 - 1.0),
        SH_C3[3] * z * (5.0 * z2 - 3.0),
        SH_C3[2] * x * (5.0 * z2 - 1.0),
        SH_C3[4] * z * (x2 - y2),
        SH_C3[5] * x * (x2 - 3.0 * y2),
    ]
}

/// Basis values together with their gradients w.r.t. the (ambient) direction
/// components. Chain through the normalization Jacobian to differentiate
/// w.r.t. an unnormalized direction.
pub fn sh_basis_with_grad(dir: &Vector3<f64>) -> ([f64; SH_COEFFS], [[f64; 3]; SH_COEFFS]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let (x2, y2, z2) = (x * x, y * y, z * z);
    let basis = sh_basis(dir);

    let grad: [[f64; 3]; SH_COEFFS] = [
        [0.0, 0.0, 0.0],
        [0.0, SH_C1, 0.0],
        [0.0, 0.0, SH_C1],
        [SH_C1, 0.0, 0.0],
        [SH_C2[0] * y, SH_C2[0] * x, 0.0],
        [0.0, SH_C2[0] * z, SH_C2[0] * y],
        [0.0, 0.0, SH_C2[1] * 6.0 * z],
        [SH_C2[0] * z, 0.0, SH_C2[0] * x],
        [SH_C2[2] * 2.0 * x, -SH_C2[2] * 2.0 * y, 0.0],
        [SH_C3[0] * 6.0 * x * y, SH_C3[0] * (3.0 * x2 - 3.0 * y2), 0.0],
        [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y],
        [0.0, SH_C3[2] * (5.0 * z2 - 1.0), SH_C3[2] * 10.0 * y * z],
        [0.0, 0.0, SH_C3[3] * (15.0 * z2 - 3.0)],
        [SH_C3[2] * (5.0 * z2 - 1.0), 0.0, SH_C3[2] * 10.0 * x * z],
        [SH_C3[4] * 2.0 * x * z, -SH_C3[4] * 2.0 * y * z, SH_C3[4] * (x2 - y2)],
        [SH_C3[5] * (3.0 * x2 - 3.0 * y2), -SH_C3[5] * 6.0 * x * y, 0.0],
    ];
    (basis, grad)
}

fn check_direction(dir: &Vector3<f64>) -> Result<()> {
    let norm = dir.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(LrfError::UnnormalizedDirection { norm });
    }
    Ok(())
}

fn check_degree(degree: usize) -> Result<()> {
    if degree > SH_MAX_DEGREE {
        return Err(LrfError::InvalidValue(format!(
            "sh degree {degree} > {SH_MAX_DEGREE}"
        )));
    }
    Ok(())
}

/// Evaluate a C-channel latent from channel-major coefficients (C x 16).
///
/// Coefficients above the requested degree are ignored. `dir` must be unit
/// length within 1e-6.
pub fn sh_eval(
    coeffs: &[f64],
    channels: usize,
    dir: &Vector3<f64>,
    degree: usize,
) -> Result<Vec<f64>> {
    check_direction(dir)?;
    check_degree(degree)?;
    if coeffs.len() != channels * SH_COEFFS {
        return Err(LrfError::ShapeMismatch {
            context: "sh_eval coefficients".into(),
            expected: format!("{} values", channels * SH_COEFFS),
            actual: format!("{}", coeffs.len()),
        });
    }
    let basis = sh_basis(dir);
    let active = coeffs_for_degree(degree);
    let mut out = vec![0.0; channels];
    for (c, out_c) in out.iter_mut().enumerate() {
        let block = &coeffs[c * SH_COEFFS..(c + 1) * SH_COEFFS];
        let mut acc = 0.0;
        for k in 0..active {
            acc += block[k] * basis[k];
        }
        *out_c = acc;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::sh_basis_reference;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_dir(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() > 1e-3 {
                return v.normalize();
            }
        }
    }

    #[test]
    fn dc_constant() {
        let coeffs: Vec<f64> = (0..2 * SH_COEFFS)
            .map(|i| if i % SH_COEFFS == 0 { 1.0 } else { 0.0 })
            .collect();
        let out = sh_eval(&coeffs, 2, &Vector3::new(0.0, 0.0, 1.0), 0).unwrap();
        for v in out {
            assert_relative_eq!(v, 0.28209479177387814, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_coefficients_zero_output() {
        let coeffs = vec![0.0; 4 * SH_COEFFS];
        let out = sh_eval(&coeffs, 4, &Vector3::new(1.0, 0.0, 0.0), 3).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_reference_basis() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..100 {
            let dir = random_dir(&mut rng);
            let ours = sh_basis(&dir);
            let reference = sh_basis_reference(&dir);
            for k in 0..SH_COEFFS {
                assert_relative_eq!(ours[k], reference[k], epsilon = 1e-13, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn odd_degrees_flip_under_negation() {
        // Verified against the reference basis on both directions; odd-l terms
        // flip sign, even-l terms do not.
        let mut rng = StdRng::seed_from_u64(7);
        let degree_of = |k: usize| match k {
            0 => 0,
            1..=3 => 1,
            4..=8 => 2,
            _ => 3,
        };
        for _ in 0..20 {
            let dir = random_dir(&mut rng);
            let pos = sh_basis(&dir);
            let neg = sh_basis(&(-dir));
            for k in 0..SH_COEFFS {
                let expected = if degree_of(k) % 2 == 1 { -pos[k] } else { pos[k] };
                assert_relative_eq!(neg[k], expected, epsilon = 1e-14);
            }
        }

        // Full-eval comparison against the reference on random coefficients.
        let coeffs: Vec<f64> = (0..4 * SH_COEFFS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dir = random_dir(&mut rng);
        let ours = sh_eval(&coeffs, 4, &dir, 3).unwrap();
        let reference = sh_basis_reference(&dir);
        for c in 0..4 {
            let expect: f64 = (0..SH_COEFFS)
                .map(|k| coeffs[c * SH_COEFFS + k] * reference[k])
                .sum();
            assert_relative_eq!(ours[c], expect, epsilon = 1e-13);
        }
    }

    #[test]
    fn truncation_matches_zeroed_high_orders() {
        let mut rng = StdRng::seed_from_u64(8);
        for degree in 0..=3usize {
            let active = coeffs_for_degree(degree);
            let mut coeffs: Vec<f64> = (0..SH_COEFFS).map(|_| rng.random_range(-1.0..1.0)).collect();
            let truncated = sh_eval(&coeffs, 1, &Vector3::new(0.0, 1.0, 0.0), degree).unwrap();
            for c in coeffs.iter_mut().skip(active) {
                *c = 0.0;
            }
            let full = sh_eval(&coeffs, 1, &Vector3::new(0.0, 1.0, 0.0), 3).unwrap();
            assert_relative_eq!(truncated[0], full[0], epsilon = 1e-15);
        }
    }

    #[test]
    fn linear_in_coefficients() {
        let mut rng = StdRng::seed_from_u64(9);
        let dir = random_dir(&mut rng);
        let c1: Vec<f64> = (0..2 * SH_COEFFS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c2: Vec<f64> = (0..2 * SH_COEFFS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (0.7, -1.3);
        let mixed: Vec<f64> = c1.iter().zip(&c2).map(|(u, v)| a * u + b * v).collect();
        let lhs = sh_eval(&mixed, 2, &dir, 3).unwrap();
        let e1 = sh_eval(&c1, 2, &dir, 3).unwrap();
        let e2 = sh_eval(&c2, 2, &dir, 3).unwrap();
        for c in 0..2 {
            assert_relative_eq!(lhs[c], a * e1[c] + b * e2[c], epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_unnormalized_direction() {
        let coeffs = vec![0.0; SH_COEFFS];
        let err = sh_eval(&coeffs, 1, &Vector3::new(0.5, 0.0, 0.0), 3).unwrap_err();
        assert!(matches!(err, LrfError::UnnormalizedDirection { .. }));
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(10);
        let h = 1e-6;
        for _ in 0..20 {
            // Gradients are of the ambient polynomial, so probe off-sphere too.
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let (_, grad) = sh_basis_with_grad(&v);
            for axis in 0..3 {
                let mut vp = v;
                let mut vm = v;
                vp[axis] += h;
                vm[axis] -= h;
                let bp = sh_basis(&vp);
                let bm = sh_basis(&vm);
                for k in 0..SH_COEFFS {
                    let fd = (bp[k] - bm[k]) / (2.0 * h);
                    assert_relative_eq!(grad[k][axis], fd, epsilon = 1e-6, max_relative = 1e-6);
                }
            }
        }
    }
}
