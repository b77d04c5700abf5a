use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::DiscreteLinearModel;
use crate::envelope::{Hyperrectangle, ParameterSet};
use crate::error::{Error, Result};
use crate::sysid::{Exponents, MonomialBasis, PnlssModel};

/// `coefficient * prod(rho^exponents)` added to entry `(row, col)` of
/// `[A B; C D]`. Rows `0..n` are states, `n..` outputs; columns `0..n` are
/// states, `n..` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coefficient: f64,
    pub row: usize,
    pub col: usize,
    pub exponents: Exponents,
}

impl Term {
    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn value(&self, rho: &[f64]) -> f64 {
        self.coefficient * monomial(&self.exponents, rho)
    }
}

fn monomial(e: &[u32], rho: &[f64]) -> f64 {
    e.iter()
        .zip(rho)
        .filter(|(p, _)| **p > 0)
        .map(|(p, v)| v.powi(*p as i32))
        .product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingParameter {
    pub name: String,
    /// Index into `[x; u]` when the parameter is a deviation variable.
    pub source: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpvModel {
    pub linear: DiscreteLinearModel,
    pub parameters: Vec<SchedulingParameter>,
    pub terms: Vec<Term>,
    pub parameter_set: ParameterSet,
}

impl LpvModel {
    pub fn state_dim(&self) -> usize {
        self.linear.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.linear.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.linear.output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters.len()
    }

    /// Nominal `[A_d B_d; C D]`.
    pub fn nominal(&self) -> DMatrix<f64> {
        let (n, nu, ny) = (self.state_dim(), self.input_dim(), self.output_dim());
        let mut m = DMatrix::zeros(n + ny, n + nu);
        m.view_mut((0, 0), (n, n)).copy_from(&self.linear.a);
        m.view_mut((0, n), (n, nu)).copy_from(&self.linear.b);
        m.view_mut((n, 0), (ny, n)).copy_from(&self.linear.c);
        m.view_mut((n, n), (ny, nu)).copy_from(&self.linear.d);
        m
    }

    /// Parameter-dependent part of `[A B; C D]`.
    pub fn residual_matrix(&self, rho: &[f64]) -> Result<DMatrix<f64>> {
        if rho.len() != self.parameters.len() {
            return Err(Error::DimensionMismatch(format!(
                "LPV model has {} parameters, got {}",
                self.parameters.len(),
                rho.len()
            )));
        }
        let (n, nu, ny) = (self.state_dim(), self.input_dim(), self.output_dim());
        let mut m = DMatrix::zeros(n + ny, n + nu);
        for t in &self.terms {
            m[(t.row, t.col)] += t.value(rho);
        }
        Ok(m)
    }

    /// Full `[A(rho) B(rho); C(rho) D(rho)]`.
    pub fn evaluate(&self, rho: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.nominal() + self.residual_matrix(rho)?)
    }

    /// `rho` of a deviation point `z = [x; u]`; fails for parameters not tied
    /// to a variable.
    pub fn parameters_from(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.parameters
            .iter()
            .map(|p| {
                p.source.map(|i| z[i]).ok_or_else(|| {
                    Error::Config(format!("parameter {} has no source variable", p.name))
                })
            })
            .collect()
    }

    /// Merges terms with equal `(row, col, exponents)`, drops exact zeros and
    /// sorts.
    pub fn canonicalize(&mut self) {
        let mut map: BTreeMap<(usize, usize, Exponents), f64> = BTreeMap::new();
        for t in self.terms.drain(..) {
            *map.entry((t.row, t.col, t.exponents)).or_insert(0.0) += t.coefficient;
        }
        self.terms = map
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|((row, col, exponents), coefficient)| Term { coefficient, row, col, exponents })
            .collect();
    }
}

/// Variable order for factoring: prefers variables that enter monomials
/// linearly, then frequent ones, then narrow envelope dimensions.
pub fn default_priority(basis: &MonomialBasis, envelope: &Hyperrectangle) -> Vec<usize> {
    let rows: Vec<&Exponents> = basis.state_blocks.iter().chain(&basis.output_blocks).flatten().collect();
    priority_from_rows(&rows, basis.n_vars, envelope)
}

/// Same rule restricted to the monomials that survived the sparse fit.
pub fn active_priority(model: &PnlssModel) -> Vec<usize> {
    let rows: Vec<&Exponents> = model
        .state_blocks
        .iter()
        .chain(&model.output_blocks)
        .flat_map(|b| b.active().map(|(e, _)| e))
        .collect();
    priority_from_rows(&rows, model.n_vars(), &model.envelope)
}

fn priority_from_rows(rows: &[&Exponents], n_vars: usize, envelope: &Hyperrectangle) -> Vec<usize> {
    let widest = (0..envelope.dim())
        .map(|i| envelope.half_width(i))
        .fold(0.0f64, f64::max);
    let stats: Vec<(f64, usize, f64)> = (0..n_vars)
        .map(|v| {
            let containing = rows.iter().filter(|e| e[v] >= 1).count();
            let linear = rows.iter().filter(|e| e[v] == 1).count();
            let fraction = if containing == 0 { 0.0 } else { linear as f64 / containing as f64 };
            let width = if widest > 0.0 && v < envelope.dim() {
                envelope.half_width(v) / widest
            } else {
                0.0
            };
            (fraction, containing, width)
        })
        .collect();
    let mut order: Vec<usize> = (0..n_vars).collect();
    order.sort_by(|&a, &b| {
        let (fa, ca, wa) = stats[a];
        let (fb, cb, wb) = stats[b];
        fb.total_cmp(&fa)
            .then(cb.cmp(&ca))
            .then(wa.total_cmp(&wb))
            .then(a.cmp(&b))
    });
    order
}

/// Rewrites every monomial as `Q_kj * z_j` with `j` the highest-priority
/// variable it contains; the remaining factors become scheduling parameters.
pub fn factorize(model: &PnlssModel, priority: &[usize]) -> Result<LpvModel> {
    let n_vars = model.n_vars();
    let mut seen = vec![false; n_vars];
    for &v in priority {
        if v >= n_vars || std::mem::replace(&mut seen[v], true) {
            return Err(Error::Config(format!("priority list: invalid or repeated variable {v}")));
        }
    }
    let rank = |v: usize| priority.iter().position(|&p| p == v).unwrap_or(priority.len() + v);

    let n = model.state_dim();
    let mut raw: Vec<(usize, usize, Exponents, f64)> = Vec::new();
    let blocks = model
        .state_blocks
        .iter()
        .enumerate()
        .chain(model.output_blocks.iter().enumerate().map(|(k, b)| (n + k, b)));
    for (row, block) in blocks {
        for (e, c) in block.active() {
            let ind = (0..n_vars)
                .filter(|&v| e[v] >= 1)
                .min_by_key(|&v| rank(v))
                .ok_or_else(|| Error::Config("monomial of degree 0 in basis".into()))?;
            let mut q = e.clone();
            q[ind] -= 1;
            raw.push((row, ind, q, c));
        }
    }

    let used: Vec<usize> = (0..n_vars).filter(|&v| raw.iter().any(|(_, _, q, _)| q[v] > 0)).collect();
    let labels = &model.envelope.labels;
    let parameters = used
        .iter()
        .map(|&v| SchedulingParameter { name: labels[v].clone(), source: Some(v) })
        .collect();
    let value_bounds = used
        .iter()
        .map(|&v| [model.envelope.lower[v], model.envelope.upper[v]])
        .collect();
    let terms = raw
        .into_iter()
        .map(|(row, col, q, coefficient)| Term {
            coefficient,
            row,
            col,
            exponents: used.iter().map(|&v| q[v]).collect(),
        })
        .collect();
    let mut lpv = LpvModel {
        linear: model.linear.clone(),
        parameters,
        terms,
        parameter_set: ParameterSet::from_values(value_bounds),
    };
    lpv.canonicalize();
    Ok(lpv)
}

type Poly = BTreeMap<Exponents, f64>;

fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = Poly::new();
    for (ea, ca) in a {
        for (eb, cb) in b {
            let e: Exponents = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
            *out.entry(e).or_insert(0.0) += ca * cb;
        }
    }
    out
}

/// Substitutes `rho = W mu + b` into every term and expands in `mu`.
pub fn reduced_lpv(
    lpv: &LpvModel,
    weight: &DMatrix<f64>,
    bias: &[f64],
    mu_set: ParameterSet,
) -> Result<LpvModel> {
    let l = lpv.parameter_count();
    let m = weight.ncols();
    if weight.nrows() != l || bias.len() != l || mu_set.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "decoder is {}x{} with {} biases and {} bounds; model has {l} parameters",
            weight.nrows(),
            m,
            bias.len(),
            mu_set.len()
        )));
    }
    let affine: Vec<Poly> = (0..l)
        .map(|i| {
            let mut p = Poly::new();
            if bias[i] != 0.0 {
                p.insert(vec![0; m], bias[i]);
            }
            for j in 0..m {
                if weight[(i, j)] != 0.0 {
                    let mut e = vec![0; m];
                    e[j] = 1;
                    p.insert(e, weight[(i, j)]);
                }
            }
            p
        })
        .collect();
    let mut terms = Vec::new();
    for t in &lpv.terms {
        let mut p: Poly = [(vec![0; m], t.coefficient)].into_iter().collect();
        for (i, &k) in t.exponents.iter().enumerate() {
            for _ in 0..k {
                p = poly_mul(&p, &affine[i]);
            }
        }
        terms.extend(p.into_iter().map(|(exponents, coefficient)| Term {
            coefficient,
            row: t.row,
            col: t.col,
            exponents,
        }));
    }
    let mut reduced = LpvModel {
        linear: lpv.linear.clone(),
        parameters: (1..=m)
            .map(|j| SchedulingParameter { name: format!("mu{j}"), source: None })
            .collect(),
        terms,
        parameter_set: mu_set,
    };
    reduced.canonicalize();
    Ok(reduced)
}
