//! Conception memory buffer: one prototype per conception, mean-initialized
//! from member features and momentum-updated by individual instances.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::infomap::ConceptionAssignment;

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptionMemory {
    reps: Array2<f64>,
    eta: f64,
    renormalize: bool,
    assignment: ConceptionAssignment,
}

impl ConceptionMemory {
    /// Prototype `k` is the mean of the features assigned to conception `k`,
    /// rescaled to unit length.
    pub fn initialize(features: ArrayView2<'_, f64>, assignment: &ConceptionAssignment, eta: f64) -> Result<Self> {
        Self::initialize_with(features, assignment, eta, true)
    }

    /// With `renormalize = false` the raw mean and the literal momentum update
    /// are kept, without projecting back onto the unit sphere.
    pub fn initialize_with(
        features: ArrayView2<'_, f64>,
        assignment: &ConceptionAssignment,
        eta: f64,
        renormalize: bool,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::invalid(format!("momentum factor must lie in [0, 1), got {eta}")));
        }
        if features.nrows() != assignment.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows for {} assigned nodes",
                features.nrows(),
                assignment.len()
            )));
        }
        let k = assignment.num_conceptions();
        let mut reps = Array2::<f64>::zeros((k, features.ncols()));
        let mut counts = vec![0usize; k];
        for (row, &c) in features.rows().into_iter().zip(assignment.labels()) {
            let mut target = reps.row_mut(c);
            target += &row;
            counts[c] += 1;
        }
        for (c, mut row) in reps.rows_mut().into_iter().enumerate() {
            assert!(counts[c] > 0, "conception {c} has no members");
            row /= counts[c] as f64;
            if renormalize {
                let n = row.dot(&row).sqrt();
                if n == 0.0 {
                    return Err(Error::ZeroVector(c));
                }
                row /= n;
            }
        }
        Ok(Self {
            reps,
            eta,
            renormalize,
            assignment: assignment.clone(),
        })
    }

    pub fn reps(&self) -> &Array2<f64> {
        &self.reps
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn num_conceptions(&self) -> usize {
        self.reps.nrows()
    }

    pub fn dim(&self) -> usize {
        self.reps.ncols()
    }

    pub fn assignment(&self) -> &ConceptionAssignment {
        &self.assignment
    }

    /// `mu_c <- eta * mu_c + (1 - eta) * v`, then back to unit length.
    pub fn momentum_update(&mut self, v: ArrayView1<'_, f64>, conception: usize) -> Result<()> {
        let k = self.num_conceptions();
        if conception >= k {
            return Err(Error::ConceptionOutOfRange { id: conception, k });
        }
        if v.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!("vector of length {} for memory of width {}", v.len(), self.dim())));
        }
        let eta = self.eta;
        let mut row = self.reps.row_mut(conception);
        row.zip_mut_with(&v, |m, &x| *m = eta * *m + (1.0 - eta) * x);
        if self.renormalize {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                row /= n;
            }
        }
        Ok(())
    }

    /// Applies updates in row order.
    pub fn update_batch(&mut self, features: ArrayView2<'_, f64>, conceptions: &[usize]) -> Result<()> {
        if features.nrows() != conceptions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows for {} conception ids",
                features.nrows(),
                conceptions.len()
            )));
        }
        for (row, &c) in features.rows().into_iter().zip(conceptions) {
            self.momentum_update(row, c)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn memory_of(rows: Array2<f64>, eta: f64) -> ConceptionMemory {
        let n = rows.nrows();
        ConceptionMemory::initialize(rows.view(), &ConceptionAssignment::singletons(n), eta).unwrap()
    }

    #[test]
    fn mean_then_renormalize() {
        let f = array![[1.0, 0.0], [0.0, 1.0]];
        let m = ConceptionMemory::initialize(f.view(), &ConceptionAssignment::from_modules(&[0, 0]), 0.9).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.reps()[[0, 0]] - r).abs() < 1e-15);
        assert!((m.reps()[[0, 1]] - r).abs() < 1e-15);
    }

    #[test]
    fn singleton_and_duplicate_members() {
        let v = array![[0.6, 0.8]];
        let m = memory_of(v.clone(), 0.5);
        assert_eq!(m.reps(), &v);

        let f = array![[0.6, 0.8], [0.6, 0.8]];
        let m = ConceptionMemory::initialize(f.view(), &ConceptionAssignment::from_modules(&[0, 0]), 0.5).unwrap();
        assert!((&m.reps().row(0) - &v.row(0)).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn momentum_example() {
        let mut m = memory_of(array![[1.0, 0.0], [0.0, 1.0]], 0.9);
        m.momentum_update(array![0.0, 1.0].view(), 0).unwrap();
        let n = (0.81f64 + 0.01).sqrt();
        assert!((m.reps()[[0, 0]] - 0.9 / n).abs() < 1e-12);
        assert!((m.reps()[[0, 1]] - 0.1 / n).abs() < 1e-12);
        assert!((m.reps()[[0, 0]] - 0.99388).abs() < 1e-5);
        assert!((m.reps()[[0, 1]] - 0.11043).abs() < 1e-5);
        assert_eq!(m.reps().row(1), array![0.0, 1.0]);
    }

    #[test]
    fn fixed_point_and_full_replacement() {
        let mut m = memory_of(array![[0.6, 0.8]], 0.9);
        m.momentum_update(array![0.6, 0.8].view(), 0).unwrap();
        assert!((m.reps()[[0, 0]] - 0.6).abs() < 1e-15 && (m.reps()[[0, 1]] - 0.8).abs() < 1e-15);

        let mut m = memory_of(array![[1.0, 0.0]], 0.0);
        m.momentum_update(array![0.0, 1.0].view(), 0).unwrap();
        assert_eq!(m.reps().row(0), array![0.0, 1.0]);
    }

    #[test]
    fn out_of_range_id() {
        let mut m = memory_of(array![[1.0, 0.0]], 0.5);
        assert!(matches!(
            m.momentum_update(array![1.0, 0.0].view(), 1),
            Err(Error::ConceptionOutOfRange { id: 1, k: 1 })
        ));
    }

    #[test]
    fn literal_update_without_renormalization() {
        let f = array![[1.0, 0.0]];
        let mut m = ConceptionMemory::initialize_with(f.view(), &ConceptionAssignment::singletons(1), 0.9, false).unwrap();
        m.momentum_update(array![0.0, 1.0].view(), 0).unwrap();
        assert_eq!(m.reps().row(0), array![0.9 * 1.0, (1.0 - 0.9) * 1.0]);
    }

    #[test]
    fn storage_independent_of_instance_count() {
        for m in [10usize, 100, 1000] {
            let f = Array2::from_shape_fn((m, 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 + 1.0);
            let labels: Vec<usize> = (0..m).map(|i| i % 3).collect();
            let mem = ConceptionMemory::initialize(f.view(), &ConceptionAssignment::from_modules(&labels), 0.9).unwrap();
            assert_eq!(mem.reps().dim(), (3, 4));
        }
    }
}
