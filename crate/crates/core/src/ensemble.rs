//! Combining several teachers' logits into one representing logit by
//! routing by agreement (RAE) or by disagreement (RDE).
//!
//! Each teacher's logit vector `zᵗ` is squashed into `xᵗ`. Starting from
//! uniform routing weights, every iteration forms the weighted consensus
//! `z_rep = Σ cₜ zᵗ` with `c = softmax(w)`, squashes it into `s`, and, unless
//! it is the last iteration, moves each weight by `k · (xᵗ · s)` with `k = +1`
//! for agreement and `k = -1` for disagreement.

use std::fmt;
use std::str::FromStr;

use crate::data::{Dataset, LogitRecord};
use crate::distill::{generate_teacher_logits, LossSpec};
use crate::error::{domain, Error, Result};
use crate::math::{dot, softmax_unchecked, squash, Mat};
use crate::models::Classifier;
use crate::pipeline::{train, History, TrainConfig, TrainTargets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoutingMode {
    /// Routing by agreement: boost teachers near the consensus.
    Agreement,
    /// Routing by disagreement: boost teachers away from it.
    Disagreement,
}

impl RoutingMode {
    fn sign(self) -> f64 {
        match self {
            RoutingMode::Agreement => 1.0,
            RoutingMode::Disagreement => -1.0,
        }
    }
}

impl fmt::Display for RoutingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoutingMode::Agreement => "rae",
            RoutingMode::Disagreement => "rde",
        })
    }
}

impl FromStr for RoutingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rae" => Ok(RoutingMode::Agreement),
            "rde" => Ok(RoutingMode::Disagreement),
            other => Err(domain(format!("unknown routing mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingConfig {
    pub mode: RoutingMode,
    pub iterations: usize,
}

impl RoutingConfig {
    pub const DEFAULT_ITERATIONS: usize = 3;

    pub fn new(mode: RoutingMode) -> Self {
        RoutingConfig { mode, iterations: Self::DEFAULT_ITERATIONS }
    }
}

/// One row of logits per teacher for a single instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherLogitMatrix(Mat);

impl TeacherLogitMatrix {
    pub fn new(z: Mat) -> Result<Self> {
        if z.rows() == 0 {
            return Err(domain("routing needs at least one teacher"));
        }
        if z.cols() == 0 {
            return Err(domain("routing needs at least one class"));
        }
        if !z.is_finite() {
            return Err(domain("teacher logits must be finite"));
        }
        Ok(TeacherLogitMatrix(z))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(domain("teacher logit rows differ in length"));
        }
        TeacherLogitMatrix::new(Mat::from_vec(rows.len(), cols, rows.concat())?)
    }

    pub fn teachers(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.0.row(t)
    }
}

/// Intermediate values of one routing run.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTrace {
    /// Coupling coefficients `c` used at each iteration.
    pub coefficients: Vec<Vec<f64>>,
    pub representing: Vec<f64>,
}

pub fn route(z: &TeacherLogitMatrix, config: RoutingConfig) -> Result<RoutingTrace> {
    if config.iterations == 0 {
        return Err(domain("routing needs at least one iteration"));
    }
    let t_count = z.teachers();
    let k = config.mode.sign();
    let squashed: Vec<Vec<f64>> = (0..t_count).map(|t| squash(z.row(t))).collect();
    let mut w = vec![0.0; t_count];
    let mut coefficients = Vec::with_capacity(config.iterations);
    let mut z_rep = vec![0.0; z.classes()];
    for iter in 0..config.iterations {
        let c = softmax_unchecked(&w, 1.0);
        z_rep.iter_mut().for_each(|v| *v = 0.0);
        for (t, &ct) in c.iter().enumerate() {
            crate::math::axpy(ct, z.row(t), &mut z_rep);
        }
        coefficients.push(c);
        if iter + 1 < config.iterations {
            let s = squash(&z_rep);
            for (wt, xt) in w.iter_mut().zip(&squashed) {
                *wt += k * dot(xt, &s);
            }
        }
    }
    Ok(RoutingTrace { coefficients, representing: z_rep })
}

/// The representing logit for one instance.
pub fn representing_logit(z: &TeacherLogitMatrix, config: RoutingConfig) -> Result<Vec<f64>> {
    Ok(route(z, config)?.representing)
}

/// Column-wise mean of the teacher logits.
pub fn mean_logit(z: &TeacherLogitMatrix) -> Vec<f64> {
    let t = z.teachers() as f64;
    (0..z.classes()).map(|c| (0..z.teachers()).map(|r| z.row(r)[c]).sum::<f64>() / t).collect()
}

/// Representing logits for every instance from per-teacher logit caches.
pub fn combine_cached(per_teacher: &[Vec<LogitRecord>], config: RoutingConfig) -> Result<Vec<LogitRecord>> {
    let first = per_teacher.first().ok_or_else(|| domain("routing needs at least one teacher"))?;
    if per_teacher.iter().any(|recs| recs.len() != first.len()) {
        return Err(Error::Data("teacher logit caches differ in length".into()));
    }
    (0..first.len())
        .map(|i| {
            let index = first[i].index;
            let rows: Vec<Vec<f64>> = per_teacher
                .iter()
                .map(|recs| {
                    let r = &recs[i];
                    if r.index != index {
                        return Err(Error::Data(format!("teacher caches disagree on record {i}")));
                    }
                    Ok(r.logits.clone())
                })
                .collect::<Result<_>>()?;
            let z = TeacherLogitMatrix::from_rows(&rows).map_err(|e| Error::Data(e.to_string()))?;
            Ok(LogitRecord { index, logits: representing_logit(&z, config)? })
        })
        .collect()
}

/// Distills several teachers into one student with logit matching against
/// the representing logit of each training instance. The teachers are only
/// consulted here; the returned student stands alone.
pub fn train_student_from_ensemble<T, S>(
    teachers: &[T],
    train_set: &Dataset,
    dev_set: &Dataset,
    routing: RoutingConfig,
    student: S,
    config: &TrainConfig,
) -> Result<(S, History)>
where
    T: Classifier,
    S: Classifier,
{
    if teachers.is_empty() {
        return Err(Error::Data("ensemble needs at least one teacher".into()));
    }
    let caches = teachers.iter().map(|t| generate_teacher_logits(t, train_set)).collect::<Result<Vec<_>>>()?;
    let combined = combine_cached(&caches, routing)?;
    let targets: Vec<Vec<f64>> = combined.into_iter().map(|r| r.logits).collect();
    train(student, TrainTargets::new(train_set, Some(&targets))?, dev_set, &LossSpec::Lm, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> TeacherLogitMatrix {
        TeacherLogitMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_teacher_is_returned_unchanged() {
        let z = m(&[&[1.5, -0.25, 3.0]]);
        for mode in [RoutingMode::Agreement, RoutingMode::Disagreement] {
            for n in 1..5 {
                let r = representing_logit(&z, RoutingConfig { mode, iterations: n }).unwrap();
                assert_eq!(r, vec![1.5, -0.25, 3.0]);
            }
        }
    }

    #[test]
    fn identical_teachers_are_returned_unchanged() {
        let z = m(&[&[2.0, -1.0], &[2.0, -1.0], &[2.0, -1.0], &[2.0, -1.0]]);
        for mode in [RoutingMode::Agreement, RoutingMode::Disagreement] {
            let r = representing_logit(&z, RoutingConfig { mode, iterations: 3 }).unwrap();
            assert!((r[0] - 2.0).abs() < 1e-9 && (r[1] + 1.0).abs() < 1e-9);
        }
        assert_eq!(mean_logit(&z), vec![2.0, -1.0]);
    }

    #[test]
    fn mean_examples() {
        assert_eq!(mean_logit(&m(&[&[1.0, 0.0], &[0.0, 1.0]])), vec![0.5, 0.5]);
        assert_eq!(mean_logit(&m(&[&[3.0, 4.0]])), vec![3.0, 4.0]);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(TeacherLogitMatrix::new(Mat::zeros(0, 2)).is_err());
        let z = m(&[&[1.0, 0.0]]);
        assert!(representing_logit(&z, RoutingConfig { mode: RoutingMode::Agreement, iterations: 0 }).is_err());
        assert!("xyz".parse::<RoutingMode>().is_err());
    }

    #[test]
    fn majority_and_minority_are_boosted() {
        let z = m(&[&[4.0, 0.0], &[4.0, 0.0], &[0.0, 4.0]]);
        let rae = route(&z, RoutingConfig { mode: RoutingMode::Agreement, iterations: 3 }).unwrap();
        let rde = route(&z, RoutingConfig { mode: RoutingMode::Disagreement, iterations: 3 }).unwrap();
        assert!(rae.coefficients[2][0] > 1.0 / 3.0);
        assert!(rde.coefficients[2][2] > 1.0 / 3.0);
    }

    proptest! {
        #[test]
        fn one_iteration_is_the_mean(rows in prop::collection::vec(prop::collection::vec(-8.0f64..8.0, 3), 1..7)) {
            let z = TeacherLogitMatrix::from_rows(&rows).unwrap();
            let r = representing_logit(&z, RoutingConfig { mode: RoutingMode::Disagreement, iterations: 1 }).unwrap();
            for (a, b) in r.iter().zip(mean_logit(&z)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn coefficients_are_distributions_and_order_free(
            rows in prop::collection::vec(prop::collection::vec(-8.0f64..8.0, 4), 2..7),
            n in 1usize..6,
            agree in any::<bool>(),
        ) {
            let mode = if agree { RoutingMode::Agreement } else { RoutingMode::Disagreement };
            let cfg = RoutingConfig { mode, iterations: n };
            let trace = route(&TeacherLogitMatrix::from_rows(&rows).unwrap(), cfg).unwrap();
            for c in &trace.coefficients {
                prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(c.iter().all(|&x| x > 0.0));
            }
            let mut reversed = rows.clone();
            reversed.reverse();
            let back = representing_logit(&TeacherLogitMatrix::from_rows(&reversed).unwrap(), cfg).unwrap();
            for (a, b) in trace.representing.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
