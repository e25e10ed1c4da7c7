#![allow(dead_code)]

//! Shared helpers for the integration suites.

use nalgebra::{DMatrix, DVector};

use portsort::panel::PanelPeriod;
use portsort::portfolio::partition_matrix;
use portsort::simulate::{DgpSpec, MuFamily, NSchedule, NoiseRule, ZLaw};

pub const Z_H: [f64; 1] = [0.99];
pub const Z_L: [f64; 1] = [0.01];

pub fn quadratic_spec(n: usize, t: usize, seed: u64) -> DgpSpec {
    DgpSpec {
        mu: MuFamily::Quadratic { coeff: 1.0 },
        d: 1,
        beta: None,
        x_law: None,
        noise: NoiseRule::Homoskedastic { sigma: 0.5 },
        z_law: ZLaw::Uniform,
        n_schedule: NSchedule::Constant { n },
        t_periods: t,
        seed,
    }
}

pub fn linear_spec(slope: f64, n: usize, t: usize, seed: u64) -> DgpSpec {
    DgpSpec {
        mu: MuFamily::Linear { slope },
        d: 1,
        beta: None,
        x_law: None,
        noise: NoiseRule::Homoskedastic { sigma: 0.5 },
        z_law: ZLaw::Uniform,
        n_schedule: NSchedule::Constant { n },
        t_periods: t,
        seed,
    }
}

pub fn flat_spec(n: usize, t: usize, seed: u64) -> DgpSpec {
    DgpSpec {
        mu: MuFamily::Constant { level: 0.0 },
        d: 1,
        beta: None,
        x_law: None,
        noise: NoiseRule::Homoskedastic { sigma: 1.0 },
        z_law: ZLaw::Uniform,
        n_schedule: NSchedule::Constant { n },
        t_periods: t,
        seed,
    }
}

/// Brute-force joint weighted least squares of returns on
/// [cell dummies, controls], solved through the full normal equations by
/// SVD. Independent of the projection path used by `fit_period`.
pub fn joint_ls_oracle(
    period: &PanelPeriod,
    j: usize,
    weights: &[f64],
) -> Option<(Vec<Option<f64>>, Vec<f64>)> {
    let part = partition_matrix(&period.characteristics, j).ok()?;
    let n = period.n();
    let d_x = period.controls.ncols();
    let active: Vec<usize> = (0..part.num_cells())
        .filter(|&c| part.counts()[c] > 0)
        .collect();
    let k = active.len() + d_x;
    if k > n {
        return None;
    }
    let mut design = DMatrix::<f64>::zeros(n, k);
    for (col, &cell) in active.iter().enumerate() {
        for (i, &ci) in part.cell_of().iter().enumerate() {
            if ci == cell {
                design[(i, col)] = 1.0;
            }
        }
    }
    for kx in 0..d_x {
        for i in 0..n {
            design[(i, active.len() + kx)] = period.controls[(i, kx)];
        }
    }
    let mut rhs = DVector::<f64>::zeros(n);
    for i in 0..n {
        let s = weights[i].sqrt();
        rhs[i] = s * period.returns[i];
        for c in 0..k {
            design[(i, c)] *= s;
        }
    }
    let svd = design.svd(true, true);
    let sol = svd.solve(&rhs, 1e-12).ok()?;
    let mut cell_values = vec![None; part.num_cells()];
    for (col, &cell) in active.iter().enumerate() {
        cell_values[cell] = Some(sol[col]);
    }
    let beta = (0..d_x).map(|kx| sol[active.len() + kx]).collect();
    Some((cell_values, beta))
}
