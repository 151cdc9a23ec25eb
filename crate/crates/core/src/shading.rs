//! Order-2 real spherical-harmonics illumination with a single 9-vector of
//! lighting coefficients shared by the three color channels.

use crate::error::{Error, Result};
use crate::NUM_SH;

/// `1 / (2 sqrt(pi))`
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
/// `sqrt(3 / (4 pi))`
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
/// `sqrt(15 / (4 pi))`
pub const SH_C2: f64 = 1.092_548_430_592_079_2;
/// `sqrt(5 / (16 pi))`
pub const SH_C3: f64 = 0.315_391_565_252_520_05;
/// `sqrt(15 / (16 pi))`
pub const SH_C4: f64 = 0.546_274_215_296_039_6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightingCoeffs(pub [f64; NUM_SH]);

impl LightingCoeffs {
    /// Constant unit radiance: the band-0 weight cancels `SH_C0`.
    pub fn uniform() -> Self {
        let mut g = [0.0; NUM_SH];
        g[0] = 1.0 / SH_C0;
        LightingCoeffs(g)
    }
}

/// Basis values for an already normalized direction.
pub(crate) fn sh_basis_unit(n: [f64; 3]) -> [f64; NUM_SH] {
    let [x, y, z] = n;
    [
        SH_C0,
        SH_C1 * y,
        SH_C1 * z,
        SH_C1 * x,
        SH_C2 * x * y,
        SH_C2 * y * z,
        SH_C3 * (3.0 * z * z - 1.0),
        SH_C2 * x * z,
        SH_C4 * (x * x - y * y),
    ]
}

/// Gradient of `sh_basis_unit(n) . gamma` with respect to the components of
/// `n`, treating them as independent.
pub(crate) fn sh_radiance_gradient(n: [f64; 3], gamma: &[f64; NUM_SH]) -> [f64; 3] {
    let [x, y, z] = n;
    let g = gamma;
    [
        SH_C1 * g[3] + SH_C2 * (y * g[4] + z * g[7]) + 2.0 * SH_C4 * x * g[8],
        SH_C1 * g[1] + SH_C2 * (x * g[4] + z * g[5]) - 2.0 * SH_C4 * y * g[8],
        SH_C1 * g[2] + SH_C2 * (y * g[5] + x * g[7]) + 6.0 * SH_C3 * z * g[6],
    ]
}

/// The nine basis values `[Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22]`.
/// The input is renormalized first.
pub fn sh_basis(normal: [f64; 3]) -> Result<[f64; NUM_SH]> {
    let len = (normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]).sqrt();
    if !(len > 0.0 && len.is_finite()) {
        return Err(Error::InvalidInput(format!("cannot evaluate SH at normal {normal:?}")));
    }
    Ok(sh_basis_unit(normal.map(|v| v / len)))
}

pub(crate) fn radiance(n: [f64; 3], gamma: &[f64; NUM_SH]) -> f64 {
    sh_basis_unit(n).iter().zip(gamma).map(|(b, g)| b * g).sum()
}

/// Multiplies each vertex's albedo by its SH radiance. Output is unclamped.
pub fn shade(albedo: &[f64], normals: &[[f64; 3]], gamma: &LightingCoeffs) -> Result<Vec<f64>> {
    Error::check_len("albedo vs normals", 3 * normals.len(), albedo.len())?;
    let mut out = Vec::with_capacity(albedo.len());
    for (a, &n) in albedo.chunks_exact(3).zip(normals) {
        let r = radiance(n, &gamma.0);
        out.extend(a.iter().map(|c| c * r));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constants_match_closed_forms() {
        assert!((SH_C0 - 1.0 / (2.0 * PI.sqrt())).abs() < 1e-16);
        assert!((SH_C1 - (3.0 / (4.0 * PI)).sqrt()).abs() < 1e-16);
        assert!((SH_C2 - (15.0 / (4.0 * PI)).sqrt()).abs() < 1e-15);
        assert!((SH_C3 - (5.0 / (16.0 * PI)).sqrt()).abs() < 1e-16);
        assert!((SH_C4 - (15.0 / (16.0 * PI)).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn basis_at_pole() {
        let b = sh_basis([0.0, 0.0, 1.0]).unwrap();
        assert!((b[0] - 0.28209).abs() < 1e-5);
        assert_eq!(b[1], 0.0);
        assert_eq!(b[3], 0.0);
        assert!((b[2] - SH_C1).abs() < 1e-16);
        assert!((b[6] - 2.0 * SH_C3).abs() < 1e-16);
    }

    #[test]
    fn band_zero_is_constant_and_input_is_renormalized() {
        for n in [[1.0, 2.0, 3.0], [-0.3, 0.0, 0.1], [0.0, -5.0, 0.0]] {
            assert_eq!(sh_basis(n).unwrap()[0], SH_C0);
        }
        let a = sh_basis([0.0, 3.0, 4.0]).unwrap();
        let b = sh_basis([0.0, 0.6, 0.8]).unwrap();
        for k in 0..9 {
            assert!((a[k] - b[k]).abs() < 1e-15);
        }
        assert!(sh_basis([0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn radiance_gradient_matches_finite_differences() {
        let gamma = [0.7, -0.2, 0.4, 0.1, 0.3, -0.5, 0.25, 0.6, -0.35];
        let n = [0.3, -0.5, 0.81];
        let g = sh_radiance_gradient(n, &gamma);
        let h = 1e-6;
        for k in 0..3 {
            let mut p = n;
            let mut m = n;
            p[k] += h;
            m[k] -= h;
            let fd = (radiance(p, &gamma) - radiance(m, &gamma)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_light_reproduces_albedo() {
        let albedo = [0.2, 0.4, 0.6, 0.9, 0.1, 0.3];
        let normals = [[0.0, 0.0, 1.0], [0.6, 0.0, -0.8]];
        let out = shade(&albedo, &normals, &LightingCoeffs::uniform()).unwrap();
        for (o, a) in out.iter().zip(&albedo) {
            assert!((o - a).abs() < 1e-15);
        }
        let dark = shade(&albedo, &normals, &LightingCoeffs([0.0; 9])).unwrap();
        assert!(dark.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shading_is_linear_in_gamma() {
        let albedo = [0.2, 0.4, 0.6, 0.9, 0.1, 0.3];
        let normals = [[0.0, 0.6, 0.8], [0.6, 0.0, -0.8]];
        let g1 = [0.5, 0.1, -0.2, 0.3, 0.0, 0.4, -0.1, 0.2, 0.05];
        let g2 = [1.5, -0.3, 0.2, 0.1, 0.7, -0.4, 0.3, 0.0, 0.5];
        let sum: [f64; 9] = std::array::from_fn(|k| g1[k] + g2[k]);
        let a = shade(&albedo, &normals, &LightingCoeffs(g1)).unwrap();
        let b = shade(&albedo, &normals, &LightingCoeffs(g2)).unwrap();
        let c = shade(&albedo, &normals, &LightingCoeffs(sum)).unwrap();
        for i in 0..c.len() {
            assert!((c[i] - a[i] - b[i]).abs() <= 1e-12 * c[i].abs().max(1.0));
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(shade(&[0.1; 5], &[[0.0, 0.0, 1.0]; 2], &LightingCoeffs::uniform()).is_err());
    }
}
