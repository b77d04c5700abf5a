//! Sparse polynomial identification of the linearization residual.

mod basis;
mod data;
mod lasso;
mod pnlss;

pub use basis::{build_basis, eval_monomial, graded_lex_cmp, total_degree, BasisSpec, Exponents, MonomialBasis};
pub use data::{generate_discrepancy_data, regressor, DiscrepancyData};
pub use lasso::{
    fit_coefficients, pareto_sweep, select_sigma, soft_threshold, LassoFit, ParetoPoint,
    StandardizedProblem, MAX_ITERATIONS,
};
pub use pnlss::{assemble_pnlss, CoefficientBlock, PnlssModel};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DiscreteLinearModel, NonlinearSystem};
use crate::envelope::Hyperrectangle;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentifyOptions {
    pub samples: usize,
    pub validation_samples: usize,
    /// Regularization grid as fractions of each equation's `sigma_max`, ascending.
    pub sigma_grid: Vec<f64>,
    pub selection_factor: f64,
    /// RK4 steps per sampling interval.
    pub substeps: usize,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self {
            samples: 2000,
            validation_samples: 400,
            sigma_grid: default_sigma_grid(),
            selection_factor: 1.1,
            substeps: 20,
        }
    }
}

/// `1e-7 .. 1e-1` in half-decade steps.
pub fn default_sigma_grid() -> Vec<f64> {
    (0..=12).map(|k| 10f64.powf(-7.0 + 0.5 * k as f64)).collect()
}

/// Sweep table of one equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationSweep {
    pub equation: String,
    pub points: Vec<ParetoPoint>,
    pub selected: usize,
}

#[derive(Debug, Clone)]
pub struct Identification {
    pub model: PnlssModel,
    pub sweeps: Vec<EquationSweep>,
    pub dropped: usize,
}

impl Identification {
    pub fn write_pareto_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "equation",
            "sigma",
            "fit_error",
            "validation_error",
            "l1_norm",
            "support",
            "selected",
        ])?;
        for s in &self.sweeps {
            for (i, p) in s.points.iter().enumerate() {
                w.write_record([
                    s.equation.clone(),
                    format!("{:e}", p.sigma),
                    format!("{:e}", p.fit_error),
                    p.validation_error.map_or(String::new(), |v| format!("{v:e}")),
                    format!("{:e}", p.l1_norm),
                    p.support.to_string(),
                    u8::from(i == s.selected).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Generates training and held-out discrepancy data, sweeps the regularization
/// per equation and assembles the PNLSS model at the selected points.
pub fn identify(
    sys: &dyn NonlinearSystem,
    lin: &DiscreteLinearModel,
    envelope: &Hyperrectangle,
    basis: &MonomialBasis,
    options: &IdentifyOptions,
) -> Result<Identification> {
    let step = lin.tau / options.substeps.max(1) as f64;
    let train = generate_discrepancy_data(sys, lin, envelope, options.samples, 1, step)?;
    let valid = if options.validation_samples > 0 {
        Some(generate_discrepancy_data(
            sys,
            lin,
            envelope,
            options.validation_samples,
            1 + options.samples as u64,
            step,
        )?)
    } else {
        None
    };

    let mut sweeps = Vec::new();
    let mut sigma = Vec::new();
    let mut fit_block = |label: String,
                         block: &[Exponents],
                         target: DVector<f64>,
                         valid_target: Option<DVector<f64>>|
     -> Result<Vec<f64>> {
        if block.is_empty() {
            sigma.push(0.0);
            return Ok(Vec::new());
        }
        let theta = regressor(block, &train.samples);
        let sigma_max = StandardizedProblem::new(&theta, &target)?.sigma_max();
        let grid: Vec<f64> = options.sigma_grid.iter().map(|f| f * sigma_max).collect();
        let valid_theta = valid.as_ref().map(|v| regressor(block, &v.samples));
        let validation = valid_theta.as_ref().zip(valid_target.as_ref());
        let rows = pareto_sweep(&theta, &target, &grid, validation)?;
        let points: Vec<ParetoPoint> = rows.iter().map(|(p, _)| p.clone()).collect();
        let selected = select_sigma(&points, options.selection_factor);
        sigma.push(points[selected].sigma);
        sweeps.push(EquationSweep { equation: label, points, selected });
        Ok(rows[selected].1.clone())
    };

    let mut state_coefficients = Vec::new();
    for (k, block) in basis.state_blocks.iter().enumerate() {
        let vt = valid.as_ref().map(|v| v.state_target(k));
        state_coefficients.push(fit_block(format!("x{}", k + 1), block, train.state_target(k), vt)?);
    }
    let mut output_coefficients = Vec::new();
    for (k, block) in basis.output_blocks.iter().enumerate() {
        let vt = valid.as_ref().map(|v| v.output_target(k));
        output_coefficients.push(fit_block(format!("y{}", k + 1), block, train.output_target(k), vt)?);
    }
    let model = assemble_pnlss(
        lin.clone(),
        basis,
        state_coefficients,
        output_coefficients,
        envelope.clone(),
        sigma,
    )?;
    Ok(Identification { model, sweeps, dropped: train.dropped })
}
