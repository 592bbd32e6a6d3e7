//! f_{mn}(z₀) tabulated on a z₀ grid.

use nalgebra::DMatrix;

use super::{ScanMode, ScanSchedule};
use crate::error::{invalid, Result};
use crate::focusing::FocusFunction;
use crate::hilbert::{matrix_elements_adaptive, HoQuadrature, TruncatedBasis};

/// Matrix elements on a uniform z₀ grid with 4-point Lagrange interpolation.
#[derive(Debug, Clone)]
pub struct FMatrixCache {
    pub z: Vec<f64>,
    pub mats: Vec<DMatrix<f64>>,
    pub quadrature_order: usize,
    quad: HoQuadrature,
    focus: FocusFunction,
}

impl FMatrixCache {
    pub fn build(basis: &TruncatedBasis, focus: &FocusFunction, schedule: &ScanSchedule, points: usize) -> Result<Self> {
        if points < 4 {
            return Err(invalid("cache_points", "at least 4"));
        }
        let (lo, hi) = (schedule.z0_start.min(schedule.z0_end), schedule.z0_start.max(schedule.z0_end));
        let probes = [lo, 0.5 * (lo + hi), hi, 0.0_f64.clamp(lo, hi)];
        let mut order = 0;
        for z0 in probes {
            let (_, o) = matrix_elements_adaptive(|z| focus.eval(z, z0), basis)?;
            order = order.max(o);
        }
        let quad = HoQuadrature::new(basis, order);
        let z: Vec<f64> = match schedule.mode {
            ScanMode::FixedPoint => vec![schedule.z0_start],
            ScanMode::LinearScan if hi > lo => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
            ScanMode::LinearScan => vec![lo],
        };
        let mats = z.iter().map(|&z0| quad.elements(|x| focus.eval(x, z0))).collect();
        Ok(Self {
            z,
            mats,
            quadrature_order: order,
            quad,
            focus: focus.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mats[0].nrows()
    }

    /// Direct quadrature at `z0`, bypassing the grid.
    pub fn direct(&self, z0: f64) -> DMatrix<f64> {
        self.quad.elements(|x| self.focus.eval(x, z0))
    }

    fn stencil(&self, z0: f64) -> (usize, [f64; 4]) {
        let n = self.z.len();
        let h = (self.z[n - 1] - self.z[0]) / (n - 1) as f64;
        let x = ((z0 - self.z[0]) / h).clamp(0.0, (n - 1) as f64);
        let i0 = (x.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
        let t = x - i0 as f64;
        let w = [
            -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
            t * (t - 2.0) * (t - 3.0) / 2.0,
            -t * (t - 1.0) * (t - 3.0) / 2.0,
            t * (t - 1.0) * (t - 2.0) / 6.0,
        ];
        (i0, w)
    }

    pub fn at(&self, z0: f64) -> DMatrix<f64> {
        if self.z.len() < 4 {
            return self.mats[0].clone();
        }
        let (i0, w) = self.stencil(z0);
        let mut out = self.mats[i0].scale(w[0]);
        for k in 1..4 {
            out += self.mats[i0 + k].scale(w[k]);
        }
        out
    }

    /// Diagonal and the upper bands ℓ = 1..=ell_max at `z0`.
    pub fn bands_at(&self, z0: f64, ell_max: usize, diag: &mut Vec<f64>, bands: &mut Vec<Vec<f64>>) {
        let d = self.dim();
        diag.resize(d, 0.0);
        bands.resize(ell_max, vec![]);
        if self.z.len() < 4 {
            let m = &self.mats[0];
            for i in 0..d {
                diag[i] = m[(i, i)];
            }
            for (l, b) in bands.iter_mut().enumerate() {
                let ell = l + 1;
                b.resize(d - ell, 0.0);
                for (i, v) in b.iter_mut().enumerate() {
                    *v = m[(i, i + ell)];
                }
            }
            return;
        }
        let (i0, w) = self.stencil(z0);
        let ms = [&self.mats[i0], &self.mats[i0 + 1], &self.mats[i0 + 2], &self.mats[i0 + 3]];
        for (i, v) in diag.iter_mut().enumerate() {
            *v = (0..4).map(|k| w[k] * ms[k][(i, i)]).sum();
        }
        for (l, b) in bands.iter_mut().enumerate() {
            let ell = l + 1;
            b.resize(d - ell, 0.0);
            for (i, v) in b.iter_mut().enumerate() {
                *v = (0..4).map(|k| w[k] * ms[k][(i, i + ell)]).sum();
            }
        }
    }
}
