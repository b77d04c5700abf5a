//! Nominal H-infinity norms, D-scaled small-gain upper bounds on the robust
//! gain of an LFT, and the model-selection report.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_singular_value, spectral_radius, to_complex};
use crate::lpvlft::{DynamicBlock, LftSystem};

/// Discrete-time `x+ = A x + B u`, `y = C x + D u` with sampling time `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub tau: f64,
}

impl StateSpace {
    pub fn check_stable(&self) -> Result<()> {
        if self.a.nrows() == 0 {
            return Ok(());
        }
        let rho = spectral_radius(&self.a);
        if rho >= 1.0 {
            return Err(Error::Instability { spectral_radius: rho });
        }
        Ok(())
    }

    /// `C (zI - A)^-1 B + D` at `z = exp(j omega tau)`.
    pub fn response(&self, omega: f64) -> DMatrix<Complex64> {
        let d = to_complex(&self.d);
        let n = self.a.nrows();
        if n == 0 {
            return d;
        }
        let z = Complex64::from_polar(1.0, omega * self.tau);
        let lhs = DMatrix::<Complex64>::identity(n, n) * z - to_complex(&self.a);
        let x = lhs
            .lu()
            .solve(&to_complex(&self.b))
            .unwrap_or_else(|| DMatrix::from_element(n, self.b.ncols(), Complex64::new(f64::INFINITY, 0.0)));
        to_complex(&self.c) * x + d
    }

    pub fn gain(&self, omega: f64) -> f64 {
        max_singular_value(&self.response(omega))
    }
}

/// `points` frequencies on `[0, pi/tau]`: half linear, half logarithmic from
/// `1e-4 pi/tau`, merged and sorted, always including both ends.
pub fn frequency_grid(points: usize, tau: f64) -> Vec<f64> {
    let nyquist = std::f64::consts::PI / tau;
    let half = (points / 2).max(2);
    let mut grid: Vec<f64> = (0..half).map(|i| nyquist * i as f64 / (half - 1) as f64).collect();
    let decades = 4.0;
    grid.extend((0..points.saturating_sub(half)).map(|i| {
        let t = i as f64 / (points - half).max(2).saturating_sub(1).max(1) as f64;
        nyquist * 10f64.powf(-decades * (1.0 - t))
    }));
    grid.push(0.0);
    grid.push(nyquist);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HinfResult {
    pub norm: f64,
    pub frequency: f64,
}

/// Peak gain over the grid, refined by golden-section search around the best
/// grid points until the relative change drops below `tolerance`.
pub fn hinf_norm(sys: &StateSpace, tolerance: f64, grid_points: usize) -> Result<HinfResult> {
    sys.check_stable()?;
    let grid = frequency_grid(grid_points, sys.tau);
    let gains: Vec<f64> = grid.iter().map(|&w| sys.gain(w)).collect();
    let mut best = HinfResult { norm: 0.0, frequency: 0.0 };
    for (w, g) in grid.iter().zip(&gains) {
        if *g > best.norm {
            best = HinfResult { norm: *g, frequency: *w };
        }
    }
    // Refine the three largest local maxima.
    let mut peaks: Vec<usize> = (0..grid.len())
        .filter(|&i| {
            let left = if i == 0 { f64::NEG_INFINITY } else { gains[i - 1] };
            let right = if i + 1 == grid.len() { f64::NEG_INFINITY } else { gains[i + 1] };
            gains[i] >= left && gains[i] >= right
        })
        .collect();
    peaks.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
    for &i in peaks.iter().take(3) {
        let lo = grid[i.saturating_sub(1)];
        let hi = grid[(i + 1).min(grid.len() - 1)];
        let r = golden_max(|w| sys.gain(w), lo, hi, tolerance);
        if r.norm > best.norm {
            best = r;
        }
    }
    Ok(best)
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tolerance: f64) -> HinfResult {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = [(a, f(a)), (b, f(b)), (c, fc), (d, fd)]
        .into_iter()
        .fold((0.0, f64::NEG_INFINITY), |m, p| if p.1 > m.1 { p } else { m });
    let mut previous = best.1;
    for _ in 0..200 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
            if fc > best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
            if fd > best.1 {
                best = (d, fd);
            }
        }
        let change = (best.1 - previous).abs();
        previous = best.1;
        if change <= tolerance * best.1.abs() && (b - a) <= 1e-9 * (1.0 + b.abs()) {
            break;
        }
    }
    HinfResult { norm: best.1, frequency: best.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisOptions {
    pub tolerance: f64,
    pub grid_points: usize,
    pub sweeps: usize,
    pub max_gamma: f64,
    /// Optimize the diagonal scalings; `false` gives the plain small-gain bound.
    pub scaled: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { tolerance: 1e-3, grid_points: 512, sweeps: 50, max_gamma: 1e6, scaled: true }
    }
}

/// Smallest `gamma` certified by the scaled small-gain test; `None` when no
/// finite value below `max_gamma` is feasible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustGain {
    pub gamma: Option<f64>,
    pub nominal: f64,
    pub frequency: f64,
}

impl LftSystem {
    /// Appends `Delta_E` from the input `u` to the output `y`, `||Delta_E|| <= bound`.
    pub fn with_dynamic_block(&self, bound: f64) -> LftSystem {
        if self.dynamic.is_some() {
            return self.clone();
        }
        let n = self.n_states;
        let (nu, ny) = (self.n_inputs, self.n_outputs);
        let loop_end = n + self.parameter_channels();
        let mut g = DMatrix::zeros(loop_end + nu + ny, loop_end + ny + nu);
        let map_row = |i: usize| if i < loop_end { i } else { i + nu };
        let map_col = |j: usize| if j < loop_end { j } else { j + ny };
        for i in 0..self.g.nrows() {
            for j in 0..self.g.ncols() {
                g[(map_row(i), map_col(j))] = self.g[(i, j)];
            }
        }
        // phi_E = u, y += theta_E
        for k in 0..nu {
            g[(loop_end + k, loop_end + ny + k)] = 1.0;
        }
        for k in 0..ny {
            g[(loop_end + nu + k, loop_end + k)] = 1.0;
        }
        LftSystem { dynamic: Some(DynamicBlock { bound, input_dim: nu, output_dim: ny }), g, ..self.clone() }
    }
}

/// Loop system after absorbing centres and scaling every uncertainty to unit
/// norm: inputs `[w; d]`, outputs `[phi; y]`.
struct Normalized {
    sys: StateSpace,
    /// Per scaling group: `(row indices, column indices)` into the loop part.
    groups: Vec<(Vec<usize>, Vec<usize>)>,
    loop_rows: usize,
    loop_cols: usize,
}

fn normalize(lft: &LftSystem, tau: f64) -> Result<Normalized> {
    let n = lft.n_states;
    let r = lft.parameter_channels();
    let (k_rows, k_cols) = (lft.delta_rows(), lft.delta_cols());
    let (g11, g12, g21, g22) = lft.partition();
    let mut center = vec![0.0; k_cols];
    let mut half = vec![0.0; k_cols];
    let mut ch = 0;
    for b in &lft.blocks {
        for _ in 0..b.repetitions {
            center[ch] = 0.5 * (b.value_bounds[0] + b.value_bounds[1]);
            half[ch] = 0.5 * (b.value_bounds[1] - b.value_bounds[0]);
            ch += 1;
        }
    }
    if let Some(d) = &lft.dynamic {
        for k in 0..d.output_dim {
            half[r + k] = d.bound;
        }
    }
    // Delta = C + H delta on the (k_cols x k_rows) loop; C is only nonzero on
    // the square parameter part.
    let c_mat = DMatrix::from_fn(k_cols, k_rows, |i, j| if i == j && i < r { center[i] } else { 0.0 });
    let h_mat = DMatrix::from_diagonal(&DVector::from_vec(half));
    let s = (DMatrix::<f64>::identity(k_rows, k_rows) - &g11 * &c_mat)
        .try_inverse()
        .ok_or(Error::AlgebraicLoop { step: 0 })?;
    let t = (DMatrix::<f64>::identity(k_cols, k_cols) - &c_mat * &g11)
        .try_inverse()
        .ok_or(Error::AlgebraicLoop { step: 0 })?;
    let n11 = &s * &g11 * &h_mat;
    let n12 = &s * &g12;
    let n21 = &g21 * &t * &h_mat;
    let n22 = &g22 + &g21 * &c_mat * &s * &g12;

    // Outer partition of n12/n21/n22: rows [x+; y], columns [x; u].
    let (ny, nu) = (lft.n_outputs, lft.n_inputs);
    let a = n22.view((0, 0), (n, n)).into_owned();
    let mut b = DMatrix::zeros(n, k_cols + nu);
    b.view_mut((0, 0), (n, k_cols)).copy_from(&n21.view((0, 0), (n, k_cols)));
    b.view_mut((0, k_cols), (n, nu)).copy_from(&n22.view((0, n), (n, nu)));
    let mut c = DMatrix::zeros(k_rows + ny, n);
    c.view_mut((0, 0), (k_rows, n)).copy_from(&n12.view((0, 0), (k_rows, n)));
    c.view_mut((k_rows, 0), (ny, n)).copy_from(&n22.view((n, 0), (ny, n)));
    let mut d = DMatrix::zeros(k_rows + ny, k_cols + nu);
    d.view_mut((0, 0), (k_rows, k_cols)).copy_from(&n11);
    d.view_mut((0, k_cols), (k_rows, nu)).copy_from(&n12.view((0, n), (k_rows, nu)));
    d.view_mut((k_rows, 0), (ny, k_cols)).copy_from(&n21.view((n, 0), (ny, k_cols)));
    d.view_mut((k_rows, k_cols), (ny, nu)).copy_from(&n22.view((n, n), (ny, nu)));

    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = (0..r).map(|i| (vec![i], vec![i])).collect();
    if let Some(dy) = &lft.dynamic {
        groups.push(((r..r + dy.input_dim).collect(), (r..r + dy.output_dim).collect()));
    }
    Ok(Normalized { sys: StateSpace { a, b, c, d, tau }, groups, loop_rows: k_rows, loop_cols: k_cols })
}

/// `min_D sigma_max(D M D^-1)` over positive scalings, one per group; the
/// performance group is fixed to 1. Stops early once the value drops below
/// `stop_below`. `log_d` is used as the starting point and updated.
fn scaled_norm(
    m: &DMatrix<Complex64>,
    groups: &[(Vec<usize>, Vec<usize>)],
    log_d: &mut [f64],
    sweeps: usize,
    stop_below: f64,
) -> f64 {
    let (rows, cols) = m.shape();
    let row_group = group_index(groups, rows, true);
    let col_group = group_index(groups, cols, false);
    let scaled = |x: &[f64]| -> DMatrix<Complex64> {
        DMatrix::from_fn(rows, cols, |i, j| {
            let e = row_group[i].map_or(0.0, |g| x[g]) - col_group[j].map_or(0.0, |g| x[g]);
            m[(i, j)] * e.exp()
        })
    };
    let top = |s: &DMatrix<Complex64>| {
        let svd = s.clone().svd(true, true);
        let k = svd.singular_values.imax();
        let u = svd.u.expect("u").column(k).into_owned();
        let v = svd.v_t.expect("v_t").row(k).adjoint();
        (svd.singular_values[k], u, v)
    };
    let mut current = scaled(log_d);
    let (mut sigma, mut u, mut v) = top(&current);
    if sigma < stop_below || groups.is_empty() {
        return sigma;
    }
    // Osborne balancing of the magnitudes as a starting point.
    let mut trial = log_d.to_vec();
    for _ in 0..20 {
        let s = scaled(&trial);
        for (g, (gr, gc)) in groups.iter().enumerate() {
            let row_norm: f64 = gr.iter().map(|&i| s.row(i).iter().map(|z| z.norm_sqr()).sum::<f64>()).sum();
            let col_norm: f64 = gc.iter().map(|&j| s.column(j).iter().map(|z| z.norm_sqr()).sum::<f64>()).sum();
            if row_norm > 0.0 && col_norm > 0.0 {
                trial[g] += 0.25 * (col_norm / row_norm).ln();
            }
        }
    }
    let balanced = scaled(&trial);
    let (s_b, u_b, v_b) = top(&balanced);
    if s_b < sigma {
        log_d.copy_from_slice(&trial);
        current = balanced;
        (sigma, u, v) = (s_b, u_b, v_b);
    }
    let mut step = 1.0;
    for _ in 0..sweeps {
        if sigma < stop_below {
            break;
        }
        let grad: Vec<f64> = groups
            .iter()
            .map(|(gr, gc)| {
                let out: f64 = gr.iter().map(|&i| u[i].norm_sqr()).sum();
                let inn: f64 = gc.iter().map(|&j| v[j].norm_sqr()).sum();
                out - inn
            })
            .collect();
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < 1e-9 {
            break;
        }
        let mut improved = false;
        for _ in 0..8 {
            let x: Vec<f64> = log_d.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
            let s = scaled(&x);
            let (s_new, u_new, v_new) = top(&s);
            if s_new < sigma {
                log_d.copy_from_slice(&x);
                current = s;
                (sigma, u, v) = (s_new, u_new, v_new);
                step *= 1.5;
                improved = true;
                break;
            }
            step *= 0.3;
        }
        if !improved {
            break;
        }
    }
    let _ = current;
    sigma
}

fn group_index(groups: &[(Vec<usize>, Vec<usize>)], len: usize, rows: bool) -> Vec<Option<usize>> {
    let mut idx = vec![None; len];
    for (g, (gr, gc)) in groups.iter().enumerate() {
        for &i in if rows { gr } else { gc } {
            idx[i] = Some(g);
        }
    }
    idx
}

/// Robust gain upper bound by bisection on `gamma`, starting from `lower`.
pub fn robust_gain_upper_bound(
    lft: &LftSystem,
    tau: f64,
    options: &AnalysisOptions,
    lower: f64,
) -> Result<RobustGain> {
    let norm = normalize(lft, tau)?;
    norm.sys.check_stable()?;
    let (kr, kc) = (norm.loop_rows, norm.loop_cols);
    let perf = StateSpace {
        a: norm.sys.a.clone(),
        b: norm.sys.b.columns(kc, lft.n_inputs).into_owned(),
        c: norm.sys.c.rows(kr, lft.n_outputs).into_owned(),
        d: norm.sys.d.view((kr, kc), (lft.n_outputs, lft.n_inputs)).into_owned(),
        tau,
    };
    let nominal = hinf_norm(&perf, options.tolerance, options.grid_points)?;
    let mut grid = frequency_grid(options.grid_points, tau);
    grid.retain(|w| *w != nominal.frequency);
    grid.insert(0, nominal.frequency);

    let mut gamma = lower.max(nominal.norm);
    let mut peak = nominal.frequency;
    let groups = &norm.groups;
    let cols = kc + lft.n_inputs;
    for &w in &grid {
        let m = norm.sys.response(w);
        let mut log_d = vec![0.0; groups.len()];
        let feasible = |g: f64, log_d: &mut Vec<f64>| -> bool {
            let mg = DMatrix::from_fn(m.nrows(), cols, |i, j| if j >= kc { m[(i, j)] / g } else { m[(i, j)] });
            if options.scaled {
                scaled_norm(&mg, groups, log_d, options.sweeps, 1.0) < 1.0
            } else {
                max_singular_value(&mg) < 1.0
            }
        };
        if gamma > 0.0 && feasible(gamma, &mut log_d) {
            continue;
        }
        let mut lo = gamma;
        let mut hi = if gamma > 0.0 { gamma * 2.0 } else { 1e-6 };
        loop {
            if hi > options.max_gamma {
                return Ok(RobustGain { gamma: None, nominal: nominal.norm, frequency: w });
            }
            if feasible(hi, &mut log_d) {
                break;
            }
            lo = hi;
            hi *= 2.0;
        }
        while hi - lo > options.tolerance * hi {
            let mid = 0.5 * (lo + hi);
            if feasible(mid, &mut log_d) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        gamma = hi;
        peak = w;
    }
    Ok(RobustGain { gamma: Some(gamma), nominal: nominal.norm, frequency: peak })
}

/// One LFT candidate of the trade-off study, already in closed loop.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub m: usize,
    pub lft: LftSystem,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub m: usize,
    pub block_sizes: Vec<usize>,
    pub delta_dim: usize,
    pub bound: f64,
    pub nominal_gain: f64,
    /// Small-gain upper bounds; `None` means no finite bound was certified.
    pub gamma_without: Option<f64>,
    pub gamma_with: Option<f64>,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub rows: Vec<GainRow>,
    pub selected: usize,
}

pub fn tradeoff_report(candidates: &[Candidate], tau: f64, options: &AnalysisOptions) -> Result<GainReport> {
    if candidates.is_empty() {
        return Err(Error::Config("trade-off report needs at least one candidate".into()));
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for c in candidates {
        let start = std::time::Instant::now();
        let without = robust_gain_upper_bound(&c.lft, tau, options, 0.0)?;
        let with = match without.gamma {
            Some(g) if c.bound > 0.0 => {
                robust_gain_upper_bound(&c.lft.with_dynamic_block(c.bound), tau, options, g)?.gamma
            }
            Some(g) => Some(g),
            None => None,
        };
        rows.push(GainRow {
            m: c.m,
            block_sizes: c.lft.block_sizes(),
            delta_dim: c.lft.parameter_channels(),
            bound: c.bound,
            nominal_gain: without.nominal,
            gamma_without: without.gamma,
            gamma_with: with,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    let selected = select_candidate(&rows);
    Ok(GainReport { rows, selected })
}

/// Smallest `Delta` among candidates whose bound is within 15% of the best.
pub fn select_candidate(rows: &[GainRow]) -> usize {
    let value = |r: &GainRow| r.gamma_with.unwrap_or(f64::INFINITY);
    let best = rows.iter().map(value).fold(f64::INFINITY, f64::min);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| (rows[i].delta_dim, i));
    order
        .iter()
        .copied()
        .find(|&i| best.is_infinite() || value(&rows[i]) <= 1.15 * best)
        .unwrap_or(0)
}

fn fmt_gamma(g: Option<f64>) -> String {
    g.map_or("unbounded".to_string(), |v| format!("{v:.6e}"))
}

impl GainReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "m",
            "block_sizes",
            "delta_dim",
            "bound",
            "nominal_gain",
            "gamma_without",
            "gamma_with",
            "selected",
        ])?;
        for (i, r) in self.rows.iter().enumerate() {
            let sizes: Vec<String> = r.block_sizes.iter().map(usize::to_string).collect();
            w.write_record([
                r.m.to_string(),
                sizes.join(" "),
                r.delta_dim.to_string(),
                format!("{:.6e}", r.bound),
                format!("{:.6e}", r.nominal_gain),
                fmt_gamma(r.gamma_without),
                fmt_gamma(r.gamma_with),
                u8::from(i == self.selected).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Robust gain report (gamma values are small-gain upper bounds)");
        let _ = writeln!(
            s,
            "{:>3}  {:>12}  {:>5}  {:>12}  {:>12}  {:>14}  {:>14}",
            "m", "blocks", "dim", "bound b", "nominal", "gamma w/o dE", "gamma w/ dE"
        );
        for (i, r) in self.rows.iter().enumerate() {
            let sizes: Vec<String> = r.block_sizes.iter().map(usize::to_string).collect();
            let _ = writeln!(
                s,
                "{:>3}  {:>12}  {:>5}  {:>12.4e}  {:>12.4e}  {:>14}  {:>14}{}",
                r.m,
                format!("[{}]", sizes.join(",")),
                r.delta_dim,
                r.bound,
                r.nominal_gain,
                fmt_gamma(r.gamma_without),
                fmt_gamma(r.gamma_with),
                if i == self.selected { "  <- selected" } else { "" }
            );
        }
        s
    }

    /// Grouped bar chart of both gamma columns against `m`.
    pub fn to_svg(&self) -> String {
        let (width, height, margin) = (480.0, 300.0, 50.0);
        let values: Vec<f64> = self
            .rows
            .iter()
            .flat_map(|r| [r.gamma_without, r.gamma_with])
            .flatten()
            .collect();
        let top = values.iter().copied().fold(0.0f64, f64::max).max(1e-12) * 1.1;
        let slot = (width - 2.0 * margin) / self.rows.len() as f64;
        let bar = slot * 0.35;
        let scale = |v: f64| (height - 2.0 * margin) * v / top;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let base = height - margin;
        let _ = writeln!(
            s,
            r#"<line x1="{margin}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
            width - margin
        );
        let _ = writeln!(s, r#"<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{base}" stroke="black"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{margin}" y="{}" font-size="12" font-family="sans-serif">gamma (max {:.3e})</text>"#,
            margin - 10.0,
            top / 1.1
        );
        for (i, r) in self.rows.iter().enumerate() {
            let x0 = margin + slot * i as f64 + 0.1 * slot;
            for (k, (g, color)) in [(r.gamma_without, "#4c72b0"), (r.gamma_with, "#dd8452")].iter().enumerate() {
                let x = x0 + k as f64 * bar;
                match g {
                    Some(v) => {
                        let h = scale(*v);
                        let _ = writeln!(
                            s,
                            r#"<rect x="{x:.2}" y="{:.2}" width="{bar:.2}" height="{h:.2}" fill="{color}"/>"#,
                            base - h
                        );
                    }
                    None => {
                        let _ = writeln!(
                            s,
                            r#"<text x="{x:.2}" y="{:.2}" font-size="10" font-family="sans-serif">inf</text>"#,
                            base - 4.0
                        );
                    }
                }
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-size="12" font-family="sans-serif">m={}</text>"#,
                x0,
                base + 16.0,
                r.m
            );
        }
        let _ = writeln!(
            s,
            r##"<rect x="{}" y="12" width="10" height="10" fill="#4c72b0"/><text x="{}" y="21" font-size="11" font-family="sans-serif">without dE</text>"##,
            width - 170.0,
            width - 155.0
        );
        let _ = writeln!(
            s,
            r##"<rect x="{}" y="28" width="10" height="10" fill="#dd8452"/><text x="{}" y="37" font-size="11" font-family="sans-serif">with dE</text>"##,
            width - 170.0,
            width - 155.0
        );
        s.push_str("</svg>\n");
        s
    }
}
