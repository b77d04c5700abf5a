use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lpv::{LpvModel, Term};
use crate::error::{Error, Result};
use crate::linalg::serde_matrix;

/// Repeated-scalar block `rho_i I_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBlock {
    pub name: String,
    pub repetitions: usize,
    pub value_bounds: [f64; 2],
    pub rate_bounds: [f64; 2],
}

/// Full block `Delta_E` with `||Delta_E|| <= bound`, mapping `input_dim`
/// channels of `phi` to `output_dim` channels of `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicBlock {
    pub bound: f64,
    pub input_dim: usize,
    pub output_dim: usize,
}

/// Upper LFT `x+ = A_ss x + A_sp theta + B_s u`, `phi = A_ps x + A_pp theta + B_p u`,
/// `y = C_s x + C_p theta + D u`, `theta = Delta phi`.
///
/// `g` rows are `[x+; phi; y]`, columns `[x; theta; u]`. Parameter channels
/// come first in `phi`/`theta`, in block order, followed by the dynamic block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LftSystem {
    pub n_states: usize,
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub blocks: Vec<UncertaintyBlock>,
    #[serde(default)]
    pub dynamic: Option<DynamicBlock>,
    #[serde(with = "serde_matrix")]
    pub g: DMatrix<f64>,
}

impl LftSystem {
    pub fn parameter_channels(&self) -> usize {
        self.blocks.iter().map(|b| b.repetitions).sum()
    }

    pub fn delta_rows(&self) -> usize {
        self.parameter_channels() + self.dynamic.as_ref().map_or(0, |d| d.input_dim)
    }

    pub fn delta_cols(&self) -> usize {
        self.parameter_channels() + self.dynamic.as_ref().map_or(0, |d| d.output_dim)
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.repetitions).collect()
    }

    /// Diagonal of the parameter part of `Delta`.
    pub fn delta_diagonal(&self, rho: &[f64]) -> Result<DVector<f64>> {
        if rho.len() != self.blocks.len() {
            return Err(Error::DimensionMismatch(format!(
                "LFT has {} parameter blocks, got {} values",
                self.blocks.len(),
                rho.len()
            )));
        }
        Ok(DVector::from_iterator(
            self.parameter_channels(),
            self.blocks
                .iter()
                .zip(rho)
                .flat_map(|(b, v)| std::iter::repeat_n(*v, b.repetitions)),
        ))
    }

    fn check(&self) -> Result<()> {
        let rows = self.n_states + self.delta_rows() + self.n_outputs;
        let cols = self.n_states + self.delta_cols() + self.n_inputs;
        if self.g.shape() != (rows, cols) {
            return Err(Error::DimensionMismatch(format!(
                "LFT matrix is {:?}, partition needs {rows}x{cols}",
                self.g.shape()
            )));
        }
        Ok(())
    }

    /// Row indices of `[x+; y]` and column indices of `[x; u]` in `g`.
    pub fn outer_indices(&self) -> (Vec<usize>, Vec<usize>) {
        let n = self.n_states;
        let rows = (0..n)
            .chain(n + self.delta_rows()..n + self.delta_rows() + self.n_outputs)
            .collect();
        let cols = (0..n)
            .chain(n + self.delta_cols()..n + self.delta_cols() + self.n_inputs)
            .collect();
        (rows, cols)
    }

    /// `(G11, G12, G21, G22)` with the loop channels as the first partition.
    pub fn partition(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.n_states;
        let (outer_rows, outer_cols) = self.outer_indices();
        let inner_rows: Vec<usize> = (n..n + self.delta_rows()).collect();
        let inner_cols: Vec<usize> = (n..n + self.delta_cols()).collect();
        let pick = |r: &[usize], c: &[usize]| DMatrix::from_fn(r.len(), c.len(), |i, j| self.g[(r[i], c[j])]);
        (
            pick(&inner_rows, &inner_cols),
            pick(&inner_rows, &outer_cols),
            pick(&outer_rows, &inner_cols),
            pick(&outer_rows, &outer_cols),
        )
    }

    /// Nominal `[A B; C D]` with `Delta = 0`.
    pub fn nominal(&self) -> DMatrix<f64> {
        self.partition().3
    }

    /// Closes `u = -K x + d`; the new input is `d`.
    pub fn with_state_feedback(&self, gain: &DMatrix<f64>) -> LftSystem {
        let n = self.n_states;
        let col_u = n + self.delta_cols();
        let b_all = self.g.columns(col_u, self.n_inputs).into_owned();
        let mut closed = self.clone();
        let correction = b_all * gain;
        let mut x_cols = closed.g.columns_mut(0, n);
        x_cols -= correction;
        closed
    }
}

/// Closes `theta = Delta phi`: `G22 + G21 (I - Delta G11)^-1 Delta G12`.
pub fn close_loop(
    g11: &DMatrix<f64>,
    g12: &DMatrix<f64>,
    g21: &DMatrix<f64>,
    g22: &DMatrix<f64>,
    delta: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if g11.is_empty() {
        return Ok(g22.clone());
    }
    let k = delta.nrows();
    let lhs = DMatrix::<f64>::identity(k, k) - delta * g11;
    let rhs = delta * g12;
    let lu = lhs.lu();
    let scale = lu.u().diagonal().amax().max(1.0);
    if lu.u().diagonal().iter().any(|d| d.abs() <= 1e-14 * scale) {
        return Err(Error::AlgebraicLoop { step: 0 });
    }
    let inner = lu.solve(&rhs).ok_or(Error::AlgebraicLoop { step: 0 })?;
    Ok(g22 + g21 * inner)
}

/// Closed-loop `[A B; C D]` at the given parameter values; the dynamic block,
/// if present, is held at zero.
pub fn evaluate_lft(lft: &LftSystem, rho: &[f64]) -> Result<DMatrix<f64>> {
    lft.check()?;
    let (g11, g12, g21, g22) = lft.partition();
    let mut diag = lft.delta_diagonal(rho)?.as_slice().to_vec();
    diag.resize(lft.delta_rows().max(lft.delta_cols()), 0.0);
    let delta = DMatrix::from_fn(lft.delta_cols(), lft.delta_rows(), |i, j| {
        if i == j && i < lft.parameter_channels() {
            diag[i]
        } else {
            0.0
        }
    });
    close_loop(&g11, &g12, &g21, &g22, &delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Signal {
    /// Column of `[x; u]`.
    Outer(usize),
    Channel(usize),
}

#[derive(Default)]
struct Builder {
    /// `(parameter, phi = sum coefficient * signal)`.
    channels: Vec<(usize, Vec<(Signal, f64)>)>,
    /// `[x+; y]` row receives `coefficient * signal`.
    outputs: Vec<(usize, Signal, f64)>,
}

impl Builder {
    fn channel(&mut self, param: usize, phi: Vec<(Signal, f64)>) -> usize {
        self.channels.push((param, phi));
        self.channels.len() - 1
    }

    fn len(&self) -> usize {
        self.channels.len()
    }

    /// Monomials sharing a prefix read from the input side reuse channels.
    fn column_trie(&mut self, terms: &[&Term], reversed: bool) {
        let mut nodes: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
        for t in terms {
            let path = expand(&t.exponents, reversed);
            let mut signal = Signal::Outer(t.col);
            for depth in 1..=path.len() {
                let key = (t.col, path[..depth].to_vec());
                let id = match nodes.get(&key) {
                    Some(&id) => id,
                    None => {
                        let id = self.channel(path[depth - 1], vec![(signal, 1.0)]);
                        nodes.insert(key, id);
                        id
                    }
                };
                signal = Signal::Channel(id);
            }
            self.outputs.push((t.row, signal, t.coefficient));
        }
    }

    /// Monomials sharing a suffix read from the output side reuse channels.
    fn row_trie(&mut self, terms: &[&Term], reversed: bool) {
        let mut nodes: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
        for t in terms {
            let path = expand(&t.exponents, reversed);
            let mut last: Option<usize> = None;
            for depth in 1..=path.len() {
                let key = (t.row, path[..depth].to_vec());
                let id = match nodes.get(&key) {
                    Some(&id) => id,
                    None => {
                        let id = self.channel(path[depth - 1], Vec::new());
                        match last {
                            None => self.outputs.push((t.row, Signal::Channel(id), 1.0)),
                            Some(parent) => self.channels[parent].1.push((Signal::Channel(id), 1.0)),
                        }
                        nodes.insert(key, id);
                        id
                    }
                };
                last = Some(id);
            }
            let leaf = last.expect("terms have positive degree");
            self.channels[leaf].1.push((Signal::Outer(t.col), t.coefficient));
        }
    }

    /// Degree-one terms: `rho_i M_i = (U S) rho_i V^T` with one channel per
    /// nonzero singular value of `M_i`.
    fn affine_svd(&mut self, terms: &[&Term], l: usize, rows: usize, cols: usize) {
        for p in 0..l {
            let mut m = DMatrix::<f64>::zeros(rows, cols);
            let mut any = false;
            for t in terms.iter().filter(|t| t.exponents[p] == 1) {
                m[(t.row, t.col)] += t.coefficient;
                any = true;
            }
            if !any {
                continue;
            }
            let svd = m.clone().svd(true, true);
            let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
            let top = svd.singular_values.amax();
            for (k, s) in svd.singular_values.iter().enumerate() {
                if *s <= 1e-12 * top {
                    continue;
                }
                let phi = (0..cols)
                    .filter(|&j| v_t[(k, j)] != 0.0)
                    .map(|j| (Signal::Outer(j), v_t[(k, j)]))
                    .collect();
                let id = self.channel(p, phi);
                for i in 0..rows {
                    let w = u[(i, k)] * s;
                    if w != 0.0 {
                        self.outputs.push((i, Signal::Channel(id), w));
                    }
                }
            }
        }
    }
}

/// `rho1^2 rho3` becomes `[0, 0, 2]`, or `[2, 0, 0]` when reversed.
fn expand(e: &[u32], reversed: bool) -> Vec<usize> {
    let mut path: Vec<usize> = e
        .iter()
        .enumerate()
        .flat_map(|(i, &k)| std::iter::repeat_n(i, k as usize))
        .collect();
    if reversed {
        path.reverse();
    }
    path
}

/// Exact LFT realization of an [`LpvModel`]. Several sharing strategies are
/// tried (input- or output-side trie, either parameter order along the paths,
/// with or without rank-revealing pull-out of the affine part) and the one
/// with the fewest channels is kept.
pub fn lft_realize(lpv: &LpvModel) -> Result<LftSystem> {
    let (n, nu, ny) = (lpv.state_dim(), lpv.input_dim(), lpv.output_dim());
    let l = lpv.parameter_count();
    for t in &lpv.terms {
        if t.exponents.len() != l || t.row >= n + ny || t.col >= n + nu {
            return Err(Error::DimensionMismatch(format!("LPV term {t:?} is out of range")));
        }
    }
    let constants: Vec<&Term> = lpv.terms.iter().filter(|t| t.degree() == 0).collect();
    let affine: Vec<&Term> = lpv.terms.iter().filter(|t| t.degree() == 1).collect();
    let higher: Vec<&Term> = lpv.terms.iter().filter(|t| t.degree() >= 2).collect();
    let varying: Vec<&Term> = lpv.terms.iter().filter(|t| t.degree() >= 1).collect();

    let mut candidates = Vec::new();
    for reversed in [false, true] {
        for by_row in [false, true] {
            for svd in [false, true] {
                let mut b = Builder::default();
                let rest = if svd {
                    b.affine_svd(&affine, l, n + ny, n + nu);
                    &higher
                } else {
                    &varying
                };
                if by_row {
                    b.row_trie(rest, reversed);
                } else {
                    b.column_trie(rest, reversed);
                }
                candidates.push(b);
            }
        }
    }
    let best = candidates
        .into_iter()
        .enumerate()
        .min_by_key(|(i, b)| (b.len(), *i))
        .map(|(_, b)| b)
        .expect("nonempty candidate list");

    // Group channels by parameter, keeping creation order inside each block.
    let mut order: Vec<usize> = (0..best.len()).collect();
    order.sort_by_key(|&c| (best.channels[c].0, c));
    let mut position = vec![0; best.len()];
    for (pos, &c) in order.iter().enumerate() {
        position[c] = pos;
    }
    let r = best.len();
    let mut g = DMatrix::zeros(n + r + ny, n + r + nu);
    let nominal = lpv.nominal();
    let row_of = |i: usize| if i < n { i } else { i + r };
    let col_of = |j: usize| if j < n { j } else { j + r };
    for i in 0..n + ny {
        for j in 0..n + nu {
            g[(row_of(i), col_of(j))] = nominal[(i, j)];
        }
    }
    for t in &constants {
        g[(row_of(t.row), col_of(t.col))] += t.coefficient;
    }
    let signal_col = |s: Signal| match s {
        Signal::Outer(j) => col_of(j),
        Signal::Channel(c) => n + position[c],
    };
    for (c, (_, phi)) in best.channels.iter().enumerate() {
        for &(s, w) in phi {
            g[(n + position[c], signal_col(s))] += w;
        }
    }
    for &(row, s, w) in &best.outputs {
        g[(row_of(row), signal_col(s))] += w;
    }

    let blocks = (0..l)
        .map(|p| UncertaintyBlock {
            name: lpv.parameters[p].name.clone(),
            repetitions: best.channels.iter().filter(|(q, _)| *q == p).count(),
            value_bounds: lpv.parameter_set.value_bounds[p],
            rate_bounds: lpv.parameter_set.rate_bounds[p],
        })
        .collect();
    Ok(LftSystem { n_states: n, n_inputs: nu, n_outputs: ny, blocks, dynamic: None, g })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DiscreteLinearModel;
    use crate::envelope::ParameterSet;
    use crate::lpvlft::SchedulingParameter;

    fn base(n: usize, nu: usize) -> DiscreteLinearModel {
        DiscreteLinearModel {
            a: DMatrix::from_fn(n, n, |i, j| if i == j { 0.9 } else { 0.05 }),
            b: DMatrix::from_element(n, nu, 0.1),
            c: DMatrix::identity(n, n),
            d: DMatrix::zeros(n, nu),
            tau: 0.1,
            x_op: vec![0.0; n],
            u_op: vec![0.0; nu],
            y_op: vec![0.0; n],
        }
    }

    fn model(terms: Vec<Term>, l: usize) -> LpvModel {
        LpvModel {
            linear: base(2, 1),
            parameters: (0..l)
                .map(|i| SchedulingParameter { name: format!("p{i}"), source: Some(i) })
                .collect(),
            terms,
            parameter_set: ParameterSet::from_values(vec![[-1.0, 1.0]; l]),
        }
    }

    #[test]
    fn scalar_closure() {
        let g = |v: f64| DMatrix::from_element(1, 1, v);
        let m = close_loop(&g(0.5), &g(1.0), &g(1.0), &g(0.0), &g(0.5)).unwrap();
        assert!((m[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rank_one_affine_needs_one_channel() {
        let terms = vec![
            Term { coefficient: 0.3, row: 1, col: 0, exponents: vec![1] },
            Term { coefficient: -0.6, row: 1, col: 1, exponents: vec![1] },
        ];
        let lft = lft_realize(&model(terms, 1)).unwrap();
        assert_eq!(lft.block_sizes(), vec![1]);
    }

    #[test]
    fn zero_residual_gives_nominal() {
        let lpv = model(vec![], 0);
        let lft = lft_realize(&lpv).unwrap();
        assert_eq!(lft.parameter_channels(), 0);
        assert_eq!(lft.g, lpv.nominal());
    }

    #[test]
    fn shared_prefix_reuses_channels() {
        let terms = vec![
            Term { coefficient: 1.0, row: 0, col: 0, exponents: vec![2, 0] },
            Term { coefficient: 2.0, row: 1, col: 0, exponents: vec![2, 1] },
        ];
        let lpv = model(terms, 2);
        let lft = lft_realize(&lpv).unwrap();
        assert_eq!(lft.parameter_channels(), 3);
        let rho = [0.7, -0.4];
        let diff = evaluate_lft(&lft, &rho).unwrap() - lpv.evaluate(&rho).unwrap();
        assert!(diff.amax() < 1e-14);
    }

    #[test]
    fn singular_loop_is_reported() {
        let g = |v: f64| DMatrix::from_element(1, 1, v);
        assert!(matches!(
            close_loop(&g(1.0), &g(1.0), &g(1.0), &g(0.0), &g(1.0)),
            Err(Error::AlgebraicLoop { .. })
        ));
    }
}
