use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::basis::{eval_monomial, Exponents, MonomialBasis};
use crate::dynamics::DiscreteLinearModel;
use crate::envelope::Hyperrectangle;
use crate::error::{Error, Result};
use crate::linalg::vector;

/// Monomials of one equation together with their fitted coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBlock {
    pub exponents: Vec<Exponents>,
    pub coefficients: Vec<f64>,
}

impl CoefficientBlock {
    pub fn evaluate(&self, z: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, c)| **c != 0.0)
            .map(|(e, c)| c * eval_monomial(e, z))
            .sum()
    }

    /// Nonzero `(exponents, coefficient)` pairs.
    pub fn active(&self) -> impl Iterator<Item = (&Exponents, f64)> {
        self.exponents
            .iter()
            .zip(self.coefficients.iter().copied())
            .filter(|(_, c)| *c != 0.0)
    }
}

/// Linear model plus block-diagonal polynomial residual:
/// `x+ = A_d x + B_d u + E' zeta(x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnlssModel {
    pub linear: DiscreteLinearModel,
    pub max_degree: u32,
    pub state_blocks: Vec<CoefficientBlock>,
    #[serde(default)]
    pub output_blocks: Vec<CoefficientBlock>,
    pub envelope: Hyperrectangle,
    /// Regularization used for each state equation, then each output equation.
    pub sigma: Vec<f64>,
}

pub fn assemble_pnlss(
    linear: DiscreteLinearModel,
    basis: &MonomialBasis,
    state_coefficients: Vec<Vec<f64>>,
    output_coefficients: Vec<Vec<f64>>,
    envelope: Hyperrectangle,
    sigma: Vec<f64>,
) -> Result<PnlssModel> {
    let n = linear.state_dim();
    if basis.state_blocks.len() != n || state_coefficients.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "PNLSS: {n} states, {} basis blocks, {} coefficient blocks",
            basis.state_blocks.len(),
            state_coefficients.len()
        )));
    }
    if basis.output_blocks.len() != output_coefficients.len()
        || basis.output_blocks.len() > linear.output_dim()
    {
        return Err(Error::DimensionMismatch("PNLSS: output blocks".into()));
    }
    if basis.n_vars != n + linear.input_dim() || envelope.dim() != basis.n_vars {
        return Err(Error::DimensionMismatch("PNLSS: variable count".into()));
    }
    let pair = |rows: &Vec<Exponents>, coeffs: Vec<f64>| -> Result<CoefficientBlock> {
        if rows.len() != coeffs.len() {
            return Err(Error::DimensionMismatch(format!(
                "PNLSS block has {} monomials but {} coefficients",
                rows.len(),
                coeffs.len()
            )));
        }
        Ok(CoefficientBlock { exponents: rows.clone(), coefficients: coeffs })
    };
    let state_blocks = basis
        .state_blocks
        .iter()
        .zip(state_coefficients)
        .map(|(r, c)| pair(r, c))
        .collect::<Result<_>>()?;
    let output_blocks = basis
        .output_blocks
        .iter()
        .zip(output_coefficients)
        .map(|(r, c)| pair(r, c))
        .collect::<Result<_>>()?;
    Ok(PnlssModel {
        linear,
        max_degree: basis.max_degree,
        state_blocks,
        output_blocks,
        envelope,
        sigma,
    })
}

impl PnlssModel {
    pub fn state_dim(&self) -> usize {
        self.linear.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.linear.input_dim()
    }

    pub fn n_vars(&self) -> usize {
        self.state_dim() + self.input_dim()
    }

    pub fn basis(&self) -> MonomialBasis {
        MonomialBasis {
            n_vars: self.n_vars(),
            max_degree: self.max_degree,
            state_blocks: self.state_blocks.iter().map(|b| b.exponents.clone()).collect(),
            output_blocks: self.output_blocks.iter().map(|b| b.exponents.clone()).collect(),
        }
    }

    /// `E' zeta(z)` for the state equations.
    pub fn state_residual(&self, z: &[f64]) -> Vec<f64> {
        self.state_blocks.iter().map(|b| b.evaluate(z)).collect()
    }

    /// Residual of each output row; rows without a block contribute zero.
    pub fn output_residual(&self, z: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.linear.output_dim()];
        for (k, b) in self.output_blocks.iter().enumerate() {
            r[k] = b.evaluate(z);
        }
        r
    }

    /// One step `x+ = A_d x + B_d u + E' zeta(x, u)` in deviation coordinates.
    pub fn evaluate(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = x.iter().chain(u).copied().collect();
        let lin = &self.linear.a * vector(x) + &self.linear.b * vector(u);
        lin.iter().zip(self.state_residual(&z)).map(|(a, b)| a + b).collect()
    }

    pub fn evaluate_output(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = x.iter().chain(u).copied().collect();
        let lin = &self.linear.c * vector(x) + &self.linear.d * vector(u);
        lin.iter().zip(self.output_residual(&z)).map(|(a, b)| a + b).collect()
    }

    /// Linear-model one-step prediction, for comparison.
    pub fn evaluate_linear(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        &self.linear.a * vector(x) + &self.linear.b * vector(u)
    }

    pub fn active_terms(&self) -> usize {
        self.state_blocks
            .iter()
            .chain(&self.output_blocks)
            .map(|b| b.active().count())
            .sum()
    }
}
