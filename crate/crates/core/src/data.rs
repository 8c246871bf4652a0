use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// One policy-level record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub location: usize,
    pub y: f64,
    /// Fitted log-mean offset from the base model.
    pub lp_mean: f64,
    /// Fitted dispersion, already divided by the exposure weight.
    pub phi: f64,
    /// Exposure in policy-years.
    pub weight: f64,
}

/// Column-oriented observation records over `n_locations` areal units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationTable {
    n_locations: usize,
    pub location: Vec<usize>,
    pub y: Vec<f64>,
    pub lp_mean: Vec<f64>,
    pub phi: Vec<f64>,
    pub weight: Vec<f64>,
}

impl ObservationTable {
    pub fn new(n_locations: usize) -> Self {
        Self { n_locations, ..Default::default() }
    }

    pub fn from_records(n_locations: usize, records: &[Observation]) -> Result<Self> {
        let mut t = Self::new(n_locations);
        for (row, r) in records.iter().enumerate() {
            t.push(*r).map_err(|e| Error::Invalid(format!("record {row}: {e}")))?;
        }
        Ok(t)
    }

    pub fn push(&mut self, r: Observation) -> Result<()> {
        if r.location >= self.n_locations {
            return Err(Error::Invalid(format!(
                "location index {} outside [0, {})",
                r.location, self.n_locations
            )));
        }
        if !(r.y.is_finite() && r.y >= 0.0) {
            return Err(Error::Invalid(format!("negative or non-finite response y = {}", r.y)));
        }
        if !(r.phi.is_finite() && r.phi > 0.0) {
            return Err(Error::Invalid(format!("non-positive dispersion phi = {}", r.phi)));
        }
        if !(r.weight.is_finite() && r.weight > 0.0) {
            return Err(Error::Invalid(format!("non-positive weight = {}", r.weight)));
        }
        if !r.lp_mean.is_finite() {
            return Err(Error::Invalid(format!("non-finite lp_mean = {}", r.lp_mean)));
        }
        self.location.push(r.location);
        self.y.push(r.y);
        self.lp_mean.push(r.lp_mean);
        self.phi.push(r.phi);
        self.weight.push(r.weight);
        Ok(())
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn get(&self, i: usize) -> Observation {
        Observation {
            location: self.location[i],
            y: self.y[i],
            lp_mean: self.lp_mean[i],
            phi: self.phi[i],
            weight: self.weight[i],
        }
    }

    /// Rows `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            n_locations: self.n_locations,
            location: idx.iter().map(|&i| self.location[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            lp_mean: idx.iter().map(|&i| self.lp_mean[i]).collect(),
            phi: idx.iter().map(|&i| self.phi[i]).collect(),
            weight: idx.iter().map(|&i| self.weight[i]).collect(),
        }
    }

    /// Row indices grouped by location, each group in row order.
    pub fn rows_by_location(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_locations];
        for (i, &loc) in self.location.iter().enumerate() {
            groups[loc].push(i);
        }
        groups
    }

    pub fn counts_by_location(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_locations];
        for &loc in &self.location {
            c[loc] += 1;
        }
        c
    }

    /// Splits rows into `(train, validation)` indices within each location:
    /// `round(frac·count)` rows train, clamped so both sides get at least one
    /// row. Locations with a single row go wholly to training.
    pub fn stratified_split<R: Rng + ?Sized>(&self, train_frac: f64, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(train_frac > 0.0 && train_frac < 1.0) {
            return Err(Error::Invalid(format!("train fraction {train_frac} outside (0, 1)")));
        }
        let mut train = Vec::new();
        let mut valid = Vec::new();
        let mut singletons = 0;
        for mut rows in self.rows_by_location() {
            if rows.len() < 2 {
                singletons += rows.len();
                train.extend(rows);
                continue;
            }
            rows.shuffle(rng);
            let k = ((train_frac * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
            train.extend_from_slice(&rows[..k]);
            valid.extend_from_slice(&rows[k..]);
        }
        if singletons > 0 {
            log::info!("{singletons} location(s) with a single observation assigned wholly to training");
        }
        train.sort_unstable();
        valid.sort_unstable();
        Ok((train, valid))
    }

    pub fn zero_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.y.iter().filter(|&&y| y == 0.0).count() as f64 / self.len() as f64
    }
}
