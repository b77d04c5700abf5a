use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponents of one monomial over all `n + n_u` deviation variables.
pub type Exponents = Vec<u32>;

/// Constraints that generate a [`MonomialBasis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub n_vars: usize,
    /// Maximum total degree `p`; the minimum is always 2.
    pub max_degree: u32,
    /// Optional per-variable maximum degree.
    #[serde(default)]
    pub variable_caps: Option<Vec<u32>>,
    /// Variables allowed in each state equation's monomials.
    pub state_subsets: Vec<Vec<usize>>,
    /// Variables allowed in each nonlinear output equation. Empty for linear outputs.
    #[serde(default)]
    pub output_subsets: Vec<Vec<usize>>,
}

/// Per-equation monomial blocks, each sorted graded-lexicographically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialBasis {
    pub n_vars: usize,
    pub max_degree: u32,
    pub state_blocks: Vec<Vec<Exponents>>,
    pub output_blocks: Vec<Vec<Exponents>>,
}

pub fn total_degree(e: &[u32]) -> u32 {
    e.iter().sum()
}

pub fn eval_monomial(e: &[u32], z: &[f64]) -> f64 {
    e.iter()
        .zip(z)
        .filter(|(p, _)| **p > 0)
        .map(|(p, v)| v.powi(*p as i32))
        .product()
}

/// Graded order: ascending total degree, then descending lexicographic exponents
/// (so `x1^2` precedes `x1 x2` precedes `x2^2`).
pub fn graded_lex_cmp(a: &[u32], b: &[u32]) -> std::cmp::Ordering {
    total_degree(a).cmp(&total_degree(b)).then_with(|| b.cmp(a))
}

pub fn build_basis(spec: &BasisSpec) -> Result<MonomialBasis> {
    if spec.max_degree < 2 {
        return Err(Error::Config(format!("basis degree must be >= 2, got {}", spec.max_degree)));
    }
    if let Some(caps) = &spec.variable_caps {
        if caps.len() != spec.n_vars {
            return Err(Error::DimensionMismatch(format!(
                "basis: {} caps for {} variables",
                caps.len(),
                spec.n_vars
            )));
        }
    }
    let block = |subset: &Vec<usize>, label: String| -> Result<Vec<Exponents>> {
        if let Some(bad) = subset.iter().find(|&&i| i >= spec.n_vars) {
            return Err(Error::Config(format!("{label}: variable index {bad} out of range")));
        }
        let mut vars = subset.clone();
        vars.sort_unstable();
        vars.dedup();
        let rows = enumerate(spec, &vars);
        if rows.is_empty() {
            log::warn!("{label}: basis is empty");
        }
        Ok(rows)
    };
    let state_blocks = spec
        .state_subsets
        .iter()
        .enumerate()
        .map(|(k, s)| block(s, format!("state equation {}", k + 1)))
        .collect::<Result<_>>()?;
    let output_blocks = spec
        .output_subsets
        .iter()
        .enumerate()
        .map(|(k, s)| block(s, format!("output equation {}", k + 1)))
        .collect::<Result<_>>()?;
    Ok(MonomialBasis {
        n_vars: spec.n_vars,
        max_degree: spec.max_degree,
        state_blocks,
        output_blocks,
    })
}

fn enumerate(spec: &BasisSpec, vars: &[usize]) -> Vec<Exponents> {
    let mut out = Vec::new();
    let mut current = vec![0u32; spec.n_vars];
    fn recurse(
        spec: &BasisSpec,
        vars: &[usize],
        pos: usize,
        remaining: u32,
        current: &mut Exponents,
        out: &mut Vec<Exponents>,
    ) {
        if pos == vars.len() {
            if total_degree(current) >= 2 {
                out.push(current.clone());
            }
            return;
        }
        let var = vars[pos];
        let cap = spec
            .variable_caps
            .as_ref()
            .map_or(remaining, |c| c[var].min(remaining));
        for d in 0..=cap {
            current[var] = d;
            recurse(spec, vars, pos + 1, remaining - d, current, out);
        }
        current[var] = 0;
    }
    recurse(spec, vars, 0, spec.max_degree, &mut current, &mut out);
    out.sort_by(|a, b| graded_lex_cmp(a, b));
    out
}

impl MonomialBasis {
    pub fn block_sizes(&self) -> Vec<usize> {
        self.state_blocks.iter().map(Vec::len).collect()
    }

    pub fn total_size(&self) -> usize {
        self.state_blocks.iter().chain(&self.output_blocks).map(Vec::len).sum()
    }

    /// Evaluates one block of monomials at `z`.
    pub fn evaluate_block(block: &[Exponents], z: &[f64]) -> Vec<f64> {
        block.iter().map(|e| eval_monomial(e, z)).collect()
    }
}
