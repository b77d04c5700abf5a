//! Envelope geometry, Halton sampling and the modified L2-star discrepancy.
//!
//! All sampling happens in deviation coordinates around the operating point.
//! A [`Hyperrectangle`] lists state bounds first, then input bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum Halton dimension supported by the built-in prime table.
pub const MAX_HALTON_DIM: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperrectangle {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub labels: Vec<String>,
}

impl Hyperrectangle {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if lower.len() != upper.len() || labels.len() != lower.len() {
            return Err(Error::DimensionMismatch(format!(
                "hyperrectangle: {} lower, {} upper, {} labels",
                lower.len(),
                upper.len(),
                labels.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::Domain(format!(
                    "dimension {i} ({}): bounds [{lo}, {hi}] are not an interval",
                    labels[i]
                )));
            }
        }
        Ok(Self { lower, upper, labels })
    }

    /// Symmetric box `[-h_i, h_i]` with generated labels `z1..zd`.
    pub fn symmetric(half_widths: &[f64]) -> Result<Self> {
        let labels = (1..=half_widths.len()).map(|i| format!("z{i}")).collect();
        Self::new(
            half_widths.iter().map(|h| -h).collect(),
            half_widths.to_vec(),
            labels,
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn half_width(&self, i: usize) -> f64 {
        0.5 * (self.upper[i] - self.lower[i])
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.upper[i] + self.lower[i])
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    /// Sub-box over the listed coordinates.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            lower: indices.iter().map(|&i| self.lower[i]).collect(),
            upper: indices.iter().map(|&i| self.upper[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }
}

/// Box constraints on scheduling-parameter values and their one-step increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub value_bounds: Vec<[f64; 2]>,
    pub rate_bounds: Vec<[f64; 2]>,
}

impl ParameterSet {
    pub fn new(value_bounds: Vec<[f64; 2]>, rate_bounds: Vec<[f64; 2]>) -> Result<Self> {
        if value_bounds.len() != rate_bounds.len() {
            return Err(Error::DimensionMismatch(
                "parameter set: value and rate bound counts differ".into(),
            ));
        }
        for (i, (v, r)) in value_bounds.iter().zip(&rate_bounds).enumerate() {
            if v[0] > v[1] || r[0] > r[1] {
                return Err(Error::Domain(format!("parameter {i}: inverted bounds")));
            }
            let width = v[1] - v[0];
            if r[0].abs() > width * (1.0 + 1e-12) || r[1].abs() > width * (1.0 + 1e-12) {
                return Err(Error::Domain(format!(
                    "parameter {i}: rate bound exceeds value range {width}"
                )));
            }
        }
        Ok(Self { value_bounds, rate_bounds })
    }

    /// Value bounds only; rate bounds default to the full value range.
    pub fn from_values(value_bounds: Vec<[f64; 2]>) -> Self {
        let rate_bounds = value_bounds
            .iter()
            .map(|b| {
                let w = b[1] - b[0];
                [-w, w]
            })
            .collect();
        Self { value_bounds, rate_bounds }
    }

    pub fn len(&self) -> usize {
        self.value_bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value_bounds.is_empty()
    }

    pub fn as_box(&self) -> Hyperrectangle {
        Hyperrectangle {
            lower: self.value_bounds.iter().map(|b| b[0]).collect(),
            upper: self.value_bounds.iter().map(|b| b[1]).collect(),
            labels: (1..=self.len()).map(|i| format!("p{i}")).collect(),
        }
    }
}

/// First `count` primes by trial division.
pub fn first_primes(count: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes
            .iter()
            .take_while(|p| *p * *p <= candidate)
            .all(|p| !candidate.is_multiple_of(*p))
        {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv_base = 1.0 / base as f64;
    let mut factor = inv_base;
    let mut value = 0.0;
    while index > 0 {
        value += (index % base) as f64 * factor;
        index /= base;
        factor *= inv_base;
    }
    value
}

/// Halton points mapped into `bounds`. Point `i` uses sequence index `skip + i`
/// and prime base `primes[k]` in dimension `k`.
pub fn halton_sample(
    dim: usize,
    count: usize,
    bounds: &Hyperrectangle,
    skip: u64,
) -> Result<Vec<Vec<f64>>> {
    if dim > MAX_HALTON_DIM {
        return Err(Error::UnsupportedDimension { dim, max: MAX_HALTON_DIM });
    }
    if dim != bounds.dim() {
        return Err(Error::DimensionMismatch(format!(
            "halton: dim {dim} but box has {} dimensions",
            bounds.dim()
        )));
    }
    let primes = first_primes(dim);
    Ok((0..count as u64)
        .map(|i| {
            primes
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let t = radical_inverse(skip + i, p);
                    bounds.lower[k] + t * (bounds.upper[k] - bounds.lower[k])
                })
                .collect()
        })
        .collect())
}

/// Hickernell modified L2-star discrepancy of a point set in the unit cube.
pub fn ml2_discrepancy(points: &[Vec<f64>]) -> Result<f64> {
    let stats = Ml2Accumulator::from_points(points)?;
    Ok(stats.value())
}

/// Running sums of the ML2 closed form, so that point sets can be grown
/// without recomputing the O(N^2) double sum from scratch.
#[derive(Debug, Clone)]
pub struct Ml2Accumulator {
    dim: usize,
    count: usize,
    single_sum: f64,
    pair_sum: f64,
}

impl Ml2Accumulator {
    pub fn new(dim: usize) -> Self {
        Self { dim, count: 0, single_sum: 0.0, pair_sum: 0.0 }
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::Domain("ML2 needs at least one point".into()))?;
        let mut acc = Self::new(first.len());
        acc.check(points)?;
        let mut own = 0.0;
        for (i, p) in points.iter().enumerate() {
            own += Self::kernel(p, p);
            for q in &points[i + 1..] {
                own += 2.0 * Self::kernel(p, q);
            }
        }
        acc.add_block(points, own, None);
        Ok(acc)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Per-point term `prod_k (3 - x_k^2) / 2`.
    pub fn single_term(point: &[f64]) -> f64 {
        point.iter().map(|x| 0.5 * (3.0 - x * x)).product()
    }

    /// Kernel `prod_k (2 - max(x_k, y_k))`.
    pub fn kernel(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| 2.0 - x.max(*y)).product()
    }

    /// Sum of the kernel over all ordered pairs drawn from `a` x `b`.
    pub fn cross_sum(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .map(|p| b.iter().map(|q| Self::kernel(p, q)).sum::<f64>())
            .sum()
    }

    fn check(&self, points: &[Vec<f64>]) -> Result<()> {
        for p in points {
            if p.len() != self.dim {
                return Err(Error::DimensionMismatch(format!(
                    "ML2: point of dimension {} in a {}-dimensional set",
                    p.len(),
                    self.dim
                )));
            }
            if let Some(x) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::Domain(format!("ML2: coordinate {x} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Adds a block whose self-sum and cross-sum against the current set are
    /// already known. `cross` is the one-sided sum over (current, block) pairs.
    pub fn add_block(&mut self, points: &[Vec<f64>], self_pair_sum: f64, cross: Option<f64>) {
        let single: f64 = points.iter().map(|p| Self::single_term(p)).sum();
        let cross = cross.unwrap_or(0.0);
        self.single_sum += single;
        self.pair_sum += self_pair_sum + 2.0 * cross;
        self.count += points.len();
    }

    /// Discrepancy value if a block with the given sums were added.
    pub fn value_with(&self, count: usize, single: f64, self_pair_sum: f64, cross: f64) -> f64 {
        Self::closed_form(
            self.dim,
            self.count + count,
            self.single_sum + single,
            self.pair_sum + self_pair_sum + 2.0 * cross,
        )
    }

    pub fn value(&self) -> f64 {
        Self::closed_form(self.dim, self.count, self.single_sum, self.pair_sum)
    }

    fn closed_form(dim: usize, count: usize, single: f64, pair: f64) -> f64 {
        if count == 0 {
            return f64::NAN;
        }
        let n = count as f64;
        let sq = (4.0f64 / 3.0).powi(dim as i32) - 2.0 / n * single + pair / (n * n);
        sq.max(0.0).sqrt()
    }
}

/// Affine map of each point into the unit cube.
pub fn normalize_to_unit(points: &[Vec<f64>], bounds: &Hyperrectangle) -> Result<Vec<Vec<f64>>> {
    let widths = nonzero_widths(bounds)?;
    points
        .iter()
        .map(|p| {
            if p.len() != bounds.dim() {
                return Err(Error::DimensionMismatch("normalize: point dimension".into()));
            }
            Ok(p.iter()
                .zip(&bounds.lower)
                .zip(&widths)
                .map(|((x, lo), w)| (x - lo) / w)
                .collect())
        })
        .collect()
}

/// Inverse of [`normalize_to_unit`].
pub fn denormalize_from_unit(
    points: &[Vec<f64>],
    bounds: &Hyperrectangle,
) -> Result<Vec<Vec<f64>>> {
    let widths = nonzero_widths(bounds)?;
    Ok(points
        .iter()
        .map(|p| {
            p.iter()
                .zip(&bounds.lower)
                .zip(&widths)
                .map(|((t, lo), w)| lo + t * w)
                .collect()
        })
        .collect())
}

fn nonzero_widths(bounds: &Hyperrectangle) -> Result<Vec<f64>> {
    bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .enumerate()
        .map(|(i, (lo, hi))| {
            let w = hi - lo;
            if w <= 0.0 {
                Err(Error::DegenerateDimension { index: i })
            } else {
                Ok(w)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize) -> Hyperrectangle {
        Hyperrectangle::new(vec![0.0; dim], vec![1.0; dim], (0..dim).map(|i| format!("d{i}")).collect())
            .unwrap()
    }

    #[test]
    fn halton_base_two_prefix() {
        let pts = halton_sample(1, 3, &unit(1), 1).unwrap();
        assert_eq!(pts, vec![vec![0.5], vec![0.25], vec![0.75]]);
        let origin = halton_sample(1, 1, &unit(1), 0).unwrap();
        assert_eq!(origin, vec![vec![0.0]]);
    }

    #[test]
    fn halton_second_dimension_uses_base_three() {
        let pts = halton_sample(2, 2, &unit(2), 1).unwrap();
        assert!((pts[0][1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((pts[1][1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn halton_rejects_large_dimension() {
        let b = unit(101);
        assert!(matches!(
            halton_sample(101, 1, &b, 1),
            Err(Error::UnsupportedDimension { dim: 101, .. })
        ));
        assert!(halton_sample(100, 2, &unit(100), 1).is_ok());
    }

    #[test]
    fn hundredth_prime() {
        assert_eq!(first_primes(100)[99], 541);
    }

    #[test]
    fn ml2_single_point_closed_form() {
        // d = 1, one point x: D^2 = 1/3 + x^2 - x.
        for x in [0.0, 0.25, 0.5, 1.0] {
            let d = ml2_discrepancy(&[vec![x]]).unwrap();
            assert!((d * d - (1.0 / 3.0 + x * x - x)).abs() < 1e-14);
        }
    }

    #[test]
    fn ml2_rejects_out_of_cube() {
        assert!(matches!(ml2_discrepancy(&[vec![1.5]]), Err(Error::Domain(_))));
        assert!(ml2_discrepancy(&[]).is_err());
    }

    #[test]
    fn ml2_coincident_points_are_finite() {
        let mut pts = halton_sample(2, 20, &unit(2), 1).unwrap();
        let base = ml2_discrepancy(&pts).unwrap();
        pts.push(pts[3].clone());
        let dup = ml2_discrepancy(&pts).unwrap();
        assert!(dup.is_finite());
        assert!((dup - base).abs() < 0.05);
    }

    #[test]
    fn accumulator_matches_batch() {
        let pts = halton_sample(3, 40, &unit(3), 1).unwrap();
        let mut acc = Ml2Accumulator::from_points(&pts[..25]).unwrap();
        let block = &pts[25..];
        let own = Ml2Accumulator::cross_sum(block, block);
        let cross = Ml2Accumulator::cross_sum(&pts[..25], block);
        let single: f64 = block.iter().map(|p| Ml2Accumulator::single_term(p)).sum();
        let predicted = acc.value_with(block.len(), single, own, cross);
        acc.add_block(block, own, Some(cross));
        let batch = ml2_discrepancy(&pts).unwrap();
        assert!((acc.value() - batch).abs() < 1e-12);
        assert!((predicted - batch).abs() < 1e-12);
    }

    #[test]
    fn normalize_examples() {
        let b = Hyperrectangle::symmetric(&[1.0]).unwrap();
        assert_eq!(normalize_to_unit(&[vec![0.0]], &b).unwrap(), vec![vec![0.5]]);
        assert_eq!(normalize_to_unit(&[vec![-1.0]], &b).unwrap(), vec![vec![0.0]]);
        let flat = Hyperrectangle::new(vec![0.0, 1.0], vec![1.0, 1.0], vec!["a".into(), "b".into()])
            .unwrap();
        assert!(matches!(
            normalize_to_unit(&[vec![0.5, 1.0]], &flat),
            Err(Error::DegenerateDimension { index: 1 })
        ));
    }

    #[test]
    fn parameter_set_rate_bound_limit() {
        assert!(ParameterSet::new(vec![[-1.0, 1.0]], vec![[-2.0, 2.0]]).is_ok());
        assert!(ParameterSet::new(vec![[-1.0, 1.0]], vec![[-2.5, 2.0]]).is_err());
        assert!(ParameterSet::new(vec![[1.0, -1.0]], vec![[0.0, 0.0]]).is_err());
    }
}
