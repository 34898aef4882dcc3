//! Joint data and its stacked representation.
//!
//! Stacking puts the `N_L` longitudinal rows and the `N_S` survival rows
//! into one list of length `N_L + N_S`. Longitudinal covariates are padded
//! with zeros on survival rows and vice versa; the spline time is missing on
//! survival rows.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError};
use crate::gmrf::Rw2Spec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub id: String,
    pub t: f64,
    pub y: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvRow {
    pub id: String,
    pub s: f64,
    /// 1 = event observed, 0 = right-censored.
    pub event: u8,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointData {
    pub long_names: Vec<String>,
    pub surv_names: Vec<String>,
    pub long_rows: Vec<LongRow>,
    pub surv_rows: Vec<SurvRow>,
}

impl JointData {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.long_rows.is_empty() && self.surv_rows.is_empty() {
            return Err(ModelError::EmptyData);
        }
        for (i, r) in self.long_rows.iter().enumerate() {
            if r.x.len() != self.long_names.len() {
                return Err(ModelError::CovariateArity { row: i, expected: self.long_names.len(), found: r.x.len() });
            }
            if !(r.t >= 0.0 && r.t.is_finite()) {
                return Err(ModelError::InvalidTime { id: r.id.clone(), time: r.t });
            }
            if !r.y.is_finite() || r.x.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteValue { id: r.id.clone() });
            }
        }
        let mut seen = HashMap::new();
        for (i, r) in self.surv_rows.iter().enumerate() {
            if r.z.len() != self.surv_names.len() {
                return Err(ModelError::CovariateArity { row: i, expected: self.surv_names.len(), found: r.z.len() });
            }
            if !(r.s > 0.0 && r.s.is_finite()) {
                return Err(ModelError::InvalidTime { id: r.id.clone(), time: r.s });
            }
            if r.event > 1 {
                return Err(ModelError::InvalidEvent { id: r.id.clone(), value: r.event });
            }
            if r.z.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteValue { id: r.id.clone() });
            }
            if seen.insert(r.id.as_str(), i).is_some() {
                return Err(ModelError::DuplicateSurvivalRow(r.id.clone()));
            }
        }
        if !self.surv_rows.is_empty() {
            if let Some(r) = self.long_rows.iter().find(|r| !seen.contains_key(r.id.as_str())) {
                return Err(ModelError::MissingSurvivalRow(r.id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Response {
    Gaussian { y: f64 },
    Survival { s: f64, event: u8 },
}

/// Data arranged as `N_L + N_S` stacked rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedDesign {
    /// Subject ids; survival-row order first, then longitudinal-only subjects.
    pub subjects: Vec<String>,
    pub n_long: usize,
    pub n_surv: usize,
    pub response: Vec<Response>,
    /// Subject of each stacked row, as an index into `subjects`.
    pub subject_index: Vec<usize>,
    /// Spline time, missing on survival rows.
    pub spline_time: Vec<Option<f64>>,
    /// Longitudinal covariate columns `(X, 0)`.
    pub long_covariates: Vec<Vec<f64>>,
    /// Survival covariate columns `(0, Z)`.
    pub surv_covariates: Vec<Vec<f64>>,
    pub long_names: Vec<String>,
    pub surv_names: Vec<String>,
    /// RW2 knots; empty without longitudinal rows.
    pub knots: Vec<f64>,
}

pub fn stack(data: &JointData, config: &ModelConfig) -> Result<StackedDesign, ModelError> {
    data.validate()?;
    let mut subjects: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for r in &data.surv_rows {
        index.insert(&r.id, subjects.len());
        subjects.push(r.id.clone());
    }
    for r in &data.long_rows {
        if !index.contains_key(r.id.as_str()) {
            index.insert(&r.id, subjects.len());
            subjects.push(r.id.clone());
        }
    }

    let n_long = data.long_rows.len();
    let n_surv = data.surv_rows.len();
    let n = n_long + n_surv;
    let mut response = Vec::with_capacity(n);
    let mut subject_index = Vec::with_capacity(n);
    let mut spline_time = Vec::with_capacity(n);
    let mut long_covariates = vec![vec![0.0; n]; data.long_names.len()];
    let mut surv_covariates = vec![vec![0.0; n]; data.surv_names.len()];

    for (i, r) in data.long_rows.iter().enumerate() {
        response.push(Response::Gaussian { y: r.y });
        subject_index.push(index[r.id.as_str()]);
        spline_time.push(Some(r.t));
        for (k, &v) in r.x.iter().enumerate() {
            long_covariates[k][i] = v;
        }
    }
    for (i, r) in data.surv_rows.iter().enumerate() {
        response.push(Response::Survival { s: r.s, event: r.event });
        subject_index.push(index[r.id.as_str()]);
        spline_time.push(None);
        for (k, &v) in r.z.iter().enumerate() {
            surv_covariates[k][n_long + i] = v;
        }
    }

    let knots = if n_long == 0 {
        Vec::new()
    } else if let Some(k) = &config.spline.knots {
        crate::gmrf::check_knots(k)?;
        k.clone()
    } else {
        let lo = data.long_rows.iter().map(|r| r.t).fold(f64::INFINITY, f64::min);
        let hi = data.long_rows.iter().map(|r| r.t).fold(f64::NEG_INFINITY, f64::max);
        Rw2Spec::equally_spaced(lo, hi, config.spline.n_knots)?
    };

    Ok(StackedDesign {
        subjects,
        n_long,
        n_surv,
        response,
        subject_index,
        spline_time,
        long_covariates,
        surv_covariates,
        long_names: data.long_names.clone(),
        surv_names: data.surv_names.clone(),
        knots,
    })
}

impl StackedDesign {
    pub fn n_rows(&self) -> usize {
        self.n_long + self.n_surv
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn has_long(&self) -> bool {
        self.n_long > 0
    }

    pub fn has_surv(&self) -> bool {
        self.n_surv > 0
    }

    pub fn long_x(&self, row: usize) -> Vec<f64> {
        self.long_covariates.iter().map(|c| c[row]).collect()
    }

    pub fn surv_z(&self, row: usize) -> Vec<f64> {
        self.surv_covariates.iter().map(|c| c[row]).collect()
    }

    /// Inverse of [`stack`].
    pub fn unstack(&self) -> JointData {
        let mut long_rows = Vec::with_capacity(self.n_long);
        let mut surv_rows = Vec::with_capacity(self.n_surv);
        for r in 0..self.n_rows() {
            let id = self.subjects[self.subject_index[r]].clone();
            match self.response[r] {
                Response::Gaussian { y } => long_rows.push(LongRow {
                    id,
                    t: self.spline_time[r].expect("longitudinal row without time"),
                    y,
                    x: self.long_x(r),
                }),
                Response::Survival { s, event } => surv_rows.push(SurvRow {
                    id,
                    s,
                    event,
                    z: self.surv_z(r),
                }),
            }
        }
        JointData {
            long_names: self.long_names.clone(),
            surv_names: self.surv_names.clone(),
            long_rows,
            surv_rows,
        }
    }

    /// The longitudinal rows alone, with the same subjects and knots.
    pub fn longitudinal_part(&self) -> StackedDesign {
        let mut part = self.clone();
        let n = self.n_long;
        part.n_surv = 0;
        part.response.truncate(n);
        part.subject_index.truncate(n);
        part.spline_time.truncate(n);
        for c in &mut part.long_covariates {
            c.truncate(n);
        }
        part.surv_covariates.clear();
        part.surv_names.clear();
        part.retain_used_subjects();
        part
    }

    /// The survival rows alone.
    pub fn survival_part(&self) -> StackedDesign {
        let mut part = self.clone();
        let n = self.n_long;
        part.n_long = 0;
        part.response.drain(..n);
        part.subject_index.drain(..n);
        part.spline_time.drain(..n);
        for c in &mut part.surv_covariates {
            c.drain(..n);
        }
        part.long_covariates.clear();
        part.long_names.clear();
        part.knots.clear();
        part.retain_used_subjects();
        part
    }

    fn retain_used_subjects(&mut self) {
        let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
        for &s in &self.subject_index {
            remap.entry(s).or_insert(0);
        }
        let kept: Vec<usize> = remap.keys().copied().collect();
        for (new, old) in kept.iter().enumerate() {
            remap.insert(*old, new);
        }
        self.subjects = kept.iter().map(|&k| self.subjects[k].clone()).collect();
        for s in &mut self.subject_index {
            *s = remap[s];
        }
    }
}
